"""Denoisers used as the proximal step of the u-subproblem.

Every denoiser is called as ``denoiser(g, lam, rho_eff)`` where ``g`` is the
pre-combined slice to denoise and ``rho_eff = rho + 2*gamma``. Tikhonov and TV
solve ``argmin_u lam*psi(u) + rho_eff/2 * ||u - g||^2``; BM3D instead reads
``lam`` as a noise standard deviation on the 0..255 scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigError

TV_STEP = 0.248


def denoise_tikhonov(g, lam, rho_eff):
    """Closed-form minimiser of ``lam*||u||^2 + rho_eff/2 * ||u - g||^2``."""
    if lam == 0:
        return np.array(g, dtype=np.float64, copy=True)
    return rho_eff * np.asarray(g, dtype=np.float64) / (2.0 * lam + rho_eff)


@numba.njit(cache=True)
def _divergence(px, py, out):
    ny, nx = px.shape
    for i in range(ny):
        for j in range(nx):
            if j == 0:
                dx = px[i, 0]
            elif j == nx - 1:
                dx = -px[i, j - 1]
            else:
                dx = px[i, j] - px[i, j - 1]
            if i == 0:
                dy = py[0, j]
            elif i == ny - 1:
                dy = -py[i - 1, j]
            else:
                dy = py[i, j] - py[i - 1, j]
            out[i, j] = dx + dy


@numba.njit(cache=True)
def _chambolle(g, w, tau, iters, tol):
    ny, nx = g.shape
    px = np.zeros((ny, nx))
    py = np.zeros((ny, nx))
    div = np.zeros((ny, nx))
    term = np.empty((ny, nx))
    inv_w = 1.0 / w
    for _ in range(iters):
        _divergence(px, py, div)
        for i in range(ny):
            for j in range(nx):
                term[i, j] = div[i, j] - g[i, j] * inv_w
        change = 0.0
        for i in range(ny):
            for j in range(nx):
                gx = term[i, j + 1] - term[i, j] if j < nx - 1 else 0.0
                gy = term[i + 1, j] - term[i, j] if i < ny - 1 else 0.0
                denom = 1.0 + tau * math.sqrt(gx * gx + gy * gy)
                nx_ = (px[i, j] + tau * gx) / denom
                ny_ = (py[i, j] + tau * gy) / denom
                c = max(abs(nx_ - px[i, j]), abs(ny_ - py[i, j]))
                if c > change:
                    change = c
                px[i, j] = nx_
                py[i, j] = ny_
        if change <= tol:
            break
    _divergence(px, py, div)
    return g - w * div


def denoise_tv(g, weight, inner_iters=50, inner_tol=1e-4):
    """Isotropic TV denoising, ``argmin_u weight*TV(u) + 1/2 ||u - g||^2``.

    Chambolle's dual projection with fixed step 0.248, forward differences and
    replicate boundaries. Stops after ``inner_iters`` or once the largest
    dual-variable change is at most ``inner_tol``.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    if weight < 0:
        raise ConfigError("TV weight must be >= 0")
    if weight == 0 or g.size == 0:
        return g.copy()
    # |u - g| <= 4 * weight; when g / weight overflows that shift is negligible
    with np.errstate(over="ignore", divide="ignore"):
        if not math.isfinite(float(np.abs(g).max()) / weight) or not math.isfinite(1.0 / weight):
            return g.copy()
    return _chambolle(g, float(weight), TV_STEP, int(inner_iters), float(inner_tol))


def tv_norm(u):
    """Isotropic TV with forward differences (zero across the last row/column)."""
    u = np.asarray(u, dtype=np.float64)
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dy[:-1, :] = u[1:, :] - u[:-1, :]
    return float(np.sqrt(dx * dx + dy * dy).sum())


def tv_objective(u, g, weight):
    return weight * tv_norm(u) + 0.5 * float(np.sum((np.asarray(u) - g) ** 2))


# -- pluggable wrappers -------------------------------------------------------


@dataclass(frozen=True)
class Tikhonov:
    kind = "tikhonov"

    def __call__(self, g, lam, rho_eff):
        return denoise_tikhonov(g, lam, rho_eff)

    def prior(self, u):
        return float(np.sum(np.asarray(u, dtype=np.float64) ** 2))


@dataclass(frozen=True)
class TV:
    inner_iters: int = 50
    inner_tol: float = 1e-4
    kind = "tv"

    def __post_init__(self):
        if self.inner_iters < 1 or not self.inner_tol > 0:
            raise ConfigError("TV inner_iters must be >= 1 and inner_tol > 0")

    def __call__(self, g, lam, rho_eff):
        return denoise_tv(g, lam / rho_eff, self.inner_iters, self.inner_tol)

    def prior(self, u):
        return tv_norm(u)


@dataclass(frozen=True)
class BM3D:
    patch: int = 8
    search_window: int = 39
    max_matches: int = 16
    stride: int = 3
    hard_threshold_factor: float = 2.7
    two_stage: bool = False
    kind = "bm3d"

    def __post_init__(self):
        if min(self.patch, self.search_window, self.max_matches, self.stride) < 1:
            raise ConfigError("BM3D counts must be positive")
        if not self.hard_threshold_factor > 0:
            raise ConfigError("BM3D threshold factor must be > 0")

    def __call__(self, g, lam, rho_eff):
        from .bm3d import denoise_bm3d

        return denoise_bm3d(
            g, lam,
            patch=self.patch,
            search_window=self.search_window,
            max_matches=self.max_matches,
            stride=self.stride,
            threshold_factor=self.hard_threshold_factor,
            two_stage=self.two_stage,
        )

    def prior(self, u):
        return None


DENOISERS = {"tikhonov": Tikhonov, "tv": TV, "bm3d": BM3D}


def make_denoiser(kind, **params):
    try:
        cls = DENOISERS[kind]
    except KeyError:
        raise ConfigError(f"unknown denoiser {kind!r}; choose from {sorted(DENOISERS)}") from None
    return cls(**params)
