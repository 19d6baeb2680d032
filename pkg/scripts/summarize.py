"""Print the tables of a finished sweep: quality at R=4 (noise-free and noisy),
run times, and PSNR against compression ratio.

    python scripts/summarize.py runs/default
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

METHODS = ("tikhonov", "tv", "bm3d")
MODES = ("slice", "temporal")


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def quality_table(rows, noise, ratio=4):
    print(f"\nR={ratio}, noise variance {noise}")
    print(f"{'method':<10}{'mode':<10}{'PSNR (dB)':>11}{'SSIM':>9}{'iters':>7}  lambda / rho / gamma")
    for mode in MODES:
        for m in METHODS:
            for r in rows:
                if (r["method"], r["mode"], r["ratio"], float(r["noise_variance"])) == (m, mode, str(ratio), noise):
                    if r["status"] != "ok":
                        print(f"{m:<10}{mode:<10}  {r['status']}")
                        continue
                    print(f"{m:<10}{mode:<10}{float(r['psnr_db']):>11.2f}{float(r['ssim']):>9.4f}"
                          f"{r['iterations']:>7}  {float(r['lambda']):.4g} / {float(r['rho']):.4g} / {float(r['gamma']):.4g}")


def runtime_table(timings):
    print("\nwall time (s) per reconstruction, mean over ratios; tuning time in brackets")
    acc = defaultdict(list)
    tune = {}
    for t in timings:
        key = (t["method"], t["mode"], float(t["noise_variance"]))
        acc[key].append(float(t["seconds"]))
        tune[key] = max(tune.get(key, 0.0), float(t["tune_seconds"]))
    for key in sorted(acc):
        m, mode, noise = key
        print(f"{m:<10}{mode:<10}noise={noise:<7g}{sum(acc[key]) / len(acc[key]):>9.1f}  [{tune[key]:.0f}]")


def ratio_table(rows, noise=0.0):
    ratios = sorted({int(r["ratio"]) for r in rows})
    print(f"\nPSNR (dB) against compression ratio, noise variance {noise}")
    print(f"{'method':<20}" + "".join(f"{'R=' + str(r):>9}" for r in ratios))
    for m in METHODS:
        for mode in MODES:
            vals = {int(r["ratio"]): r for r in rows
                    if (r["method"], r["mode"], float(r["noise_variance"])) == (m, mode, noise)}
            if not vals:
                continue
            cells = "".join(f"{float(vals[r]['psnr_db']):>9.2f}" if r in vals and vals[r]["status"] == "ok"
                            else f"{'-':>9}" for r in ratios)
            print(f"{m + ':' + mode:<20}{cells}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    args = ap.parse_args()
    rows = load(args.run_dir / "results.csv")
    noises = sorted({float(r["noise_variance"]) for r in rows})
    for noise in noises:
        quality_table(rows, noise)
    runtime_table(load(args.run_dir / "timings.csv"))
    for noise in noises:
        ratio_table(rows, noise)


if __name__ == "__main__":
    main()
