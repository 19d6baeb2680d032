"""``cslsm`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 I/O or file-format error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .admm import SolverConfig, reconstruct
from .denoisers import make_denoiser
from .errors import ConfigError, DivergenceError, FileFormatError
from .forward import DEFAULT_MASK_SEED, DEFAULT_NOISE_SEED, EncodeConfig, encode, generate_masks
from .harness import ExperimentPlan, parse_config, run_experiment, tune_cell, write_tune_trace
from .metrics import evaluate, format_float, write_reports
from .phantom import PhantomSpec, generate_phantom, write_centers
from .volume import read_masks, read_measurements, read_volume, write_masks, write_measurements, write_volume

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
HISTORY_COLUMNS = ["iter", "rel_change", "primal_residual", "data_misfit", "seconds"]

logger = logging.getLogger("cslsm")


def apply_thread_limit(env=os.environ):
    """Honour ``CSLSM_THREADS`` (0 or unset = automatic)."""
    raw = env.get("CSLSM_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CSLSM_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError("CSLSM_THREADS must be >= 0")
    if n:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def _denoiser(args):
    if args.denoiser == "tv":
        return make_denoiser("tv", inner_iters=args.tv_inner_iters, inner_tol=args.tv_inner_tol)
    if args.denoiser == "bm3d":
        return make_denoiser("bm3d", two_stage=args.bm3d_two_stage)
    return make_denoiser("tikhonov")


def _add_denoiser_flags(p):
    p.add_argument("--denoiser", choices=("tikhonov", "tv", "bm3d"), default="tikhonov")
    p.add_argument("--tv-inner-iters", type=int, default=50)
    p.add_argument("--tv-inner-tol", type=float, default=1e-4)
    p.add_argument("--bm3d-two-stage", action="store_true")


def cmd_phantom(args):
    spec = PhantomSpec(nx=args.nx, ny=args.ny, nz=args.nz, nuclei_count=args.nuclei,
                       nucleus_radius=args.radius, seed=args.seed)
    vol, centers = generate_phantom(spec, return_centers=True)
    write_volume(vol, args.out)
    if args.centers:
        write_centers(centers, args.centers)
    print(f"wrote {args.out} ({spec.nz}x{spec.ny}x{spec.nx}, {spec.nuclei_count} nuclei)")


def cmd_encode(args):
    vol = read_volume(args.inp)
    cfg = EncodeConfig(args.ratio, args.density, args.mask_seed, args.noise_var, args.noise_seed)
    masks = generate_masks(vol.nx, vol.ny, args.ratio, args.density, args.mask_seed)
    ms = encode(vol, cfg, masks)
    write_measurements(ms, args.out)
    write_masks(masks, args.masks)
    print(f"wrote {args.out} ({ms.shots} shots) and {args.masks}")


def cmd_reconstruct(args):
    ms = read_measurements(args.meas)
    masks = read_masks(args.masks)
    noisy = ms.noise_variance > 0
    kw = {}
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    if args.tol is not None:
        kw["rel_tol"] = args.tol
    cfg = SolverConfig.for_noise(noisy, lam=args.lam, rho=args.rho, gamma=args.gamma,
                                 denoiser=_denoiser(args), init=args.init, **kw)
    sweep = "temporal" if args.temporal or args.gamma > 0 else "slice"
    rec, state = reconstruct(ms, masks, cfg, sweep=sweep)
    write_volume(rec, args.out)
    if args.log:
        with open(args.log, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for i, h in enumerate(state.history, start=1):
                w.writerow([i, format_float(h.rel_change), format_float(h.primal_residual),
                            format_float(h.data_misfit), format_float(h.seconds)])
    secs = state.history[-1].seconds if state.history else 0.0
    print(f"wrote {args.out} after {state.k} iterations ({secs:.2f} s)")


def cmd_evaluate(args):
    ref = read_volume(args.ref)
    test = read_volume(args.test)
    report = evaluate(ref, test, method_label=args.method, compression_ratio=args.ratio,
                      iterations=args.iterations, wall_seconds=args.seconds)
    write_reports([report], args.out)
    print(f"psnr_db={format_float(report.psnr_db)} ssim={format_float(report.ssim)}")


def cmd_tune(args):
    ms = read_measurements(args.meas)
    masks = read_masks(args.masks)
    truth = read_volume(args.truth)
    plan = ExperimentPlan(budget=args.budget, tune_seed=args.seed, frames=max(ms.shots * masks.count, 1),
                          ratios=(masks.count,), tv_inner_iters=args.tv_inner_iters,
                          tv_inner_tol=args.tv_inner_tol, bm3d_two_stage=args.bm3d_two_stage)
    mode = "temporal" if args.temporal else "slice"

    def progress(i, entry):
        logger.info("eval %d: %s -> %.4f dB", i, entry.params, entry.value)

    res = tune_cell(plan, truth, ms, masks, args.denoiser, mode, ms.noise_variance > 0, progress)
    write_tune_trace(res, args.out)
    print("best " + " ".join(f"{k}={v:.6g}" for k, v in res.best_params.items())
          + f" psnr_db={res.best_value:.4f}")


def cmd_sweep(args):
    plan = parse_config(args.config)
    if args.export_slice is not None:
        plan = replace(plan, export_slice=args.export_slice)
    if args.output_dir is not None:
        plan = replace(plan, output_dir=Path(args.output_dir).resolve())

    def progress(row):
        print(f"{row['method']}:{row['mode']} R={row['ratio']} noise={row['noise_variance']} "
              f"psnr={row.get('psnr_db', '-')} ssim={row.get('ssim', '-')} [{row['status']}]", flush=True)

    rows = run_experiment(plan, progress=progress)
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(failed)} failed; results in {plan.output_dir / 'results.csv'}")
    if any(r["status"].startswith("diverged") for r in failed):
        return EXIT_DIVERGED
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_version(args):
    print(f"cslsm {__version__}")


def build_parser():
    parser = argparse.ArgumentParser(prog="cslsm", description="Compressive light-sheet reconstruction")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic volume")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--nz", type=int, default=40)
    p.add_argument("--nuclei", type=int, default=60)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--centers")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("encode", help="simulate coded shots")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--ratio", type=int, required=True)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--mask-seed", type=int, default=DEFAULT_MASK_SEED)
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=DEFAULT_NOISE_SEED)
    p.add_argument("--out", required=True)
    p.add_argument("--masks", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("reconstruct", help="PnP-ADMM reconstruction")
    p.add_argument("--meas", required=True)
    p.add_argument("--masks", required=True)
    _add_denoiser_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--temporal", action="store_true", help="Gauss-Seidel sweep even when gamma is 0")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--init", choices=("adjoint", "zeros"), default="adjoint")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="PSNR and SSIM against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="")
    p.add_argument("--ratio", type=int, default=0)
    p.add_argument("--iterations", type=int, default=0)
    p.add_argument("--seconds", type=float, default=0.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="Bayesian parameter search")
    p.add_argument("--meas", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--truth", required=True)
    _add_denoiser_flags(p)
    p.add_argument("--temporal", action="store_true")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sweep", help="run an experiment plan")
    p.add_argument("config")
    p.add_argument("--export-slice", type=int)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("version", help="print the version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_thread_limit()
        return args.func(args) or EXIT_OK
    except ConfigError as exc:
        print(f"cslsm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"cslsm: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileFormatError, OSError) as exc:
        print(f"cslsm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
