"""Stand-alone BM3D check on a noisy phantom slice across noise levels."""
import numpy as np

from cslsm.bm3d import denoise_bm3d
from cslsm.metrics import psnr
from cslsm.phantom import PhantomSpec, generate_phantom


def main():
    clean = generate_phantom(PhantomSpec()).data[20].astype(np.float64)
    rng = np.random.default_rng(0)
    print(f"{'sigma*255':>10}{'noisy dB':>10}{'stage 1':>10}{'stage 2':>10}")
    for level in (5, 10, 15, 25, 40):
        noisy = clean + rng.normal(0, level / 255, clean.shape)
        one = denoise_bm3d(noisy, level)
        two = denoise_bm3d(noisy, level, two_stage=True)
        print(f"{level:>10}{psnr(clean, noisy):>10.2f}{psnr(clean, one):>10.2f}{psnr(clean, two):>10.2f}")


if __name__ == "__main__":
    main()
