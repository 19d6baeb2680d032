"""Mask generation and the coded-shot forward model.

Shot ``j`` sums ``R`` consecutive slices, each multiplied element-wise by its
mask: ``b_j = sum_r phi_r * v_{(j-1)R + r}``. Masks are shared across shots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .volume import MaskSet, MeasurementSet

DEFAULT_MASK_SEED = 20240101
DEFAULT_NOISE_SEED = 7
DEFAULT_NOISE_VARIANCE = 1e-3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(counter):
    """SplitMix64 output for each 64-bit counter (vectorised, stateless).

    Used as a counter-based generator: element ``(r, p)`` of a mask set with
    seed ``s`` draws from counter ``s + GOLDEN * (r * npix + p + 1)``, so any
    element can be regenerated independently of the others.
    """
    z = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _uniform(seed, stream, npix):
    idx = np.arange(npix, dtype=np.uint64) + np.uint64(stream * npix + 1)
    with np.errstate(over="ignore"):
        counter = np.uint64(seed) + _GOLDEN * idx
    bits = splitmix64(counter) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / 9007199254740992.0)


def generate_masks(nx, ny, ratio, density=0.5, seed=DEFAULT_MASK_SEED):
    if nx < 1 or ny < 1 or ratio < 1:
        raise ConfigError(f"invalid mask dimensions nx={nx} ny={ny} R={ratio}")
    if not 0.0 < density < 1.0:
        raise ConfigError(f"mask density must lie in (0, 1), got {density}")
    if not 0 <= seed < 2**64:
        raise ConfigError("mask seed must be an unsigned 64-bit integer")
    npix = nx * ny
    masks = np.empty((ratio, ny, nx), dtype=np.uint8)
    for r in range(ratio):
        masks[r] = (_uniform(seed, r, npix) < density).reshape(ny, nx)
    return MaskSet(masks, seed=seed)


@dataclass(frozen=True)
class EncodeConfig:
    ratio: int
    mask_density: float = 0.5
    mask_seed: int = DEFAULT_MASK_SEED
    noise_variance: float = 0.0
    noise_seed: int = DEFAULT_NOISE_SEED

    def __post_init__(self):
        if self.ratio < 1:
            raise ConfigError("compression ratio R must be >= 1")
        if not 0.0 < self.mask_density < 1.0:
            raise ConfigError("mask density must lie in (0, 1)")
        if not self.noise_variance >= 0:
            raise ConfigError("noise variance must be >= 0")


def forward(stack, masks):
    """Clean shots for a float array ``stack`` of shape (N*R, ny, nx)."""
    m = np.asarray(masks, dtype=np.float64)
    ratio = m.shape[0]
    nz, ny, nx = stack.shape
    if nz % ratio:
        raise ConfigError(f"depth {nz} is not divisible by R={ratio}")
    return (stack.reshape(nz // ratio, ratio, ny, nx) * m).sum(axis=1)


def adjoint(shots, masks):
    """Transpose of :func:`forward`: every mask applied to its shot, stacked."""
    m = np.asarray(masks, dtype=np.float64)
    n, ny, nx = shots.shape
    return (shots[:, None] * m).reshape(n * m.shape[0], ny, nx)


def shot_noise(shape, variance, seed, shot):
    """Gaussian noise for one shot; the stream is keyed by ``(seed, shot)``."""
    rng = np.random.default_rng([seed, shot])
    return rng.standard_normal(shape) * np.sqrt(variance)


def encode(v, cfg, masks=None):
    """Encode a volume into compressed shots.

    ``masks`` defaults to ``generate_masks`` with the config's density and seed.

    With noise, each clean shot is divided by ``R``, perturbed with zero-mean
    Gaussian noise of variance ``cfg.noise_variance`` and multiplied back by
    ``R``, so clean and noisy shots share one scale.
    """
    if v.nz % cfg.ratio:
        raise ConfigError(f"depth {v.nz} is not divisible by R={cfg.ratio}")
    if masks is None:
        masks = generate_masks(v.nx, v.ny, cfg.ratio, cfg.mask_density, cfg.mask_seed)
    elif masks.count != cfg.ratio or (masks.ny, masks.nx) != (v.ny, v.nx):
        raise ConfigError("mask set does not match volume dimensions / ratio")
    shots = forward(v.data.astype(np.float64), masks.masks)
    if cfg.noise_variance > 0:
        R = cfg.ratio
        for j in range(shots.shape[0]):
            noise = shot_noise(shots.shape[1:], cfg.noise_variance, cfg.noise_seed, j)
            shots[j] = R * (shots[j] / R + noise)
    return MeasurementSet(shots, cfg.ratio, cfg.noise_variance, cfg.noise_seed, masks.seed)
