"""Per-iteration diagnostics for one desk-phantom reconstruction.

    python scripts/convergence_trace.py --denoiser tv --lam 0.0987 --rho 0.0114 --gamma 0.001
"""
import argparse

from cslsm.admm import SolverConfig, reconstruct
from cslsm.denoisers import make_denoiser
from cslsm.forward import EncodeConfig, encode, generate_masks
from cslsm.metrics import psnr, ssim
from cslsm.phantom import PhantomSpec, generate_phantom


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--denoiser", default="tikhonov", choices=("tikhonov", "tv", "bm3d"))
    ap.add_argument("--lam", type=float, default=0.0152)
    ap.add_argument("--rho", type=float, default=0.001)
    ap.add_argument("--gamma", type=float, default=0.0)
    ap.add_argument("--ratio", type=int, default=4)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--max-iters", type=int)
    args = ap.parse_args()

    truth = generate_phantom(PhantomSpec())
    masks = generate_masks(truth.nx, truth.ny, args.ratio)
    ms = encode(truth, EncodeConfig(args.ratio, noise_variance=args.noise), masks)
    kw = {"max_iters": args.max_iters} if args.max_iters else {}
    cfg = SolverConfig.for_noise(args.noise > 0, lam=args.lam, rho=args.rho, gamma=args.gamma,
                                 denoiser=make_denoiser(args.denoiser), **kw)

    def show(k, state):
        h = state.history[-1]
        print(f"{k:4d}  rel_change={h.rel_change:.3e}  primal={h.primal_residual:.3e}  "
              f"misfit={h.data_misfit:.3e}  t={h.seconds:.1f}s")

    rec, state = reconstruct(ms, masks, cfg, callback=show)
    print(f"PSNR {psnr(truth, rec):.3f} dB, SSIM {ssim(truth, rec):.4f}, {state.k} iterations")


if __name__ == "__main__":
    main()
