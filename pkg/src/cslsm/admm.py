"""Plug-and-play ADMM reconstruction of a slice stack from coded shots.

The model is

    1/2 sum_j ||b_j - sum_r phi_r v_{(j-1)R+r}||^2 + lam sum_n psi(v_n)
        + gamma/2 sum_n ||v_n - v_{n-1}||^2        (circular in n)

split as ``v = u`` with scaled duals ``d``. The v-step is an exact per-pixel
solve (the masks are diagonal, so the Woodbury form needs no matrix
inversion). The u-step is a denoiser call; with ``gamma > 0`` the slices are
swept in ascending order, each using its freshly updated predecessor and the
previous sweep's successor.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .denoisers import Tikhonov, denoise_tikhonov
from .errors import ConfigError, DenoiserError, DivergenceError
from .forward import adjoint, forward
from .volume import Volume

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    rho: float
    gamma: float = 0.0
    max_iters: int = 100
    rel_tol: float = 1e-3
    denoiser: object = field(default_factory=Tikhonov)
    init: str = "adjoint"

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be > 0")
        if self.init not in ("adjoint", "zeros"):
            raise ConfigError(f"init must be 'adjoint' or 'zeros', got {self.init!r}")

    @classmethod
    def for_noise(cls, noisy, **kwargs):
        """Stopping defaults: 100 iterations / 1e-3 noise-free, 200 / 1e-2 noisy."""
        kwargs.setdefault("max_iters", 200 if noisy else 100)
        kwargs.setdefault("rel_tol", 1e-2 if noisy else 1e-3)
        return cls(**kwargs)


@dataclass
class IterationRecord:
    rel_change: float
    primal_residual: float
    data_misfit: float
    seconds: float


@dataclass
class SolverState:
    v: np.ndarray
    u: np.ndarray
    d: np.ndarray
    k: int = 0
    history: list = field(default_factory=list)


def v_update_shot(b, g, masks, rho):
    """Exact minimiser of ``1/2||b - sum_r m_r g'_r||^2 + rho/2 ||v - g||^2``.

    ``b``: (ny, nx) shot; ``g``: (R, ny, nx) prior targets ``u - d``; ``masks``:
    (R, ny, nx) binary. Also accepts a leading shot axis on ``b`` and ``g``
    (``(N, ny, nx)`` and ``(N, R, ny, nx)``); masks are shared across shots.
    """
    m = np.asarray(masks, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-3:] != m.shape or b.shape[-2:] != m.shape[-2:]:
        raise ConfigError(f"shape mismatch: b {b.shape}, g {g.shape}, masks {m.shape}")
    s = m.sum(axis=0)
    h = (m * g).sum(axis=-3)
    return m * ((b - h) / (rho + s))[..., None, :, :] + g


def u_update_slice(v_n, d_n, u_prev, u_next, lam, rho, gamma, denoiser):
    """Denoise ``(rho (v_n + d_n) + gamma (u_prev + u_next)) / (rho + 2 gamma)``.

    With ``gamma == 0`` this is exactly ``denoiser(v_n + d_n, lam, rho)``.
    """
    if gamma == 0:
        return denoiser(v_n + d_n, lam, rho)
    rho_eff = rho + 2.0 * gamma
    g = (rho * (v_n + d_n) + gamma * (u_prev + u_next)) / rho_eff
    return denoiser(g, lam, rho_eff)


def _check_inputs(ms, masks):
    if masks.count != ms.compression_ratio:
        raise ConfigError(f"{masks.count} masks but measurements use R={ms.compression_ratio}")
    if (masks.ny, masks.nx) != (ms.ny, ms.nx):
        raise ConfigError("mask and measurement dimensions differ")


def initial_state(ms, masks, init="adjoint"):
    b = ms.data.astype(np.float64)
    m = masks.masks.astype(np.float64)
    n_slices = ms.shots * masks.count
    shape = (n_slices, ms.ny, ms.nx)
    if init == "adjoint":
        v = adjoint(b, m) / masks.count
    else:
        v = np.zeros(shape)
    return SolverState(v=v, u=v.copy(), d=np.zeros(shape))


def _u_sweep(state, lam, rho, gamma, denoiser, temporal):
    v, d = state.v, state.d
    n_slices = v.shape[0]
    if not temporal:
        if isinstance(denoiser, Tikhonov):
            return denoise_tikhonov(v + d, lam, rho)
        out = np.empty_like(v)
        for n in range(n_slices):
            out[n] = _denoise_slice(n, v[n], d[n], None, None, lam, rho, 0.0, denoiser)
        return out
    old = state.u
    new = np.empty_like(old)
    for n in range(n_slices):
        # u_0 is u_NR from the previous sweep; u_{NR+1} is u_1 from the previous sweep
        prev = new[n - 1] if n > 0 else old[n_slices - 1]
        nxt = old[(n + 1) % n_slices]
        new[n] = _denoise_slice(n, v[n], d[n], prev, nxt, lam, rho, gamma, denoiser)
    return new


def _denoise_slice(n, v_n, d_n, prev, nxt, lam, rho, gamma, denoiser):
    try:
        return u_update_slice(v_n, d_n, prev, nxt, lam, rho, gamma, denoiser)
    except Exception as exc:
        raise DenoiserError(n + 1, exc) from exc


def reconstruct(ms, masks, cfg, sweep=None, callback=None):
    """Run PnP-ADMM; returns ``(Volume, SolverState)``.

    ``sweep`` forces ``"slice"`` (independent u-updates) or ``"temporal"``
    (Gauss-Seidel sweep); by default it follows ``cfg.gamma > 0``.
    Stops after ``cfg.max_iters`` iterations or once
    ``||v^{k+1} - v^k|| / max(||v^k||, 1e-12) <= cfg.rel_tol``.
    """
    _check_inputs(ms, masks)
    if sweep is None:
        sweep = "temporal" if cfg.gamma > 0 else "slice"
    if sweep not in ("slice", "temporal"):
        raise ConfigError(f"unknown sweep {sweep!r}")
    if sweep == "slice" and cfg.gamma > 0:
        raise ConfigError("slice sweep requires gamma == 0")
    temporal = sweep == "temporal"
    b = ms.data.astype(np.float64)
    m = masks.masks.astype(np.float64)
    ratio = masks.count
    state = initial_state(ms, masks, cfg.init)
    shots, ny, nx = b.shape
    start = time.perf_counter()
    for k in range(1, cfg.max_iters + 1):
        g = (state.u - state.d).reshape(shots, ratio, ny, nx)
        v_new = v_update_shot(b, g, m, cfg.rho).reshape(state.v.shape)
        change = np.linalg.norm(v_new - state.v) / max(np.linalg.norm(state.v), EPS)
        state.v = v_new
        state.u = _u_sweep(state, cfg.lam, cfg.rho, cfg.gamma, cfg.denoiser, temporal)
        state.d = state.d + state.v - state.u
        state.k = k
        if not (np.isfinite(state.v).all() and np.isfinite(state.u).all()
                and np.isfinite(state.d).all()):
            raise DivergenceError(k)
        rec = IterationRecord(
            rel_change=float(change),
            primal_residual=float(np.linalg.norm(state.v - state.u)),
            data_misfit=float(np.linalg.norm(forward(state.v, m) - b)),
            seconds=time.perf_counter() - start,
        )
        state.history.append(rec)
        if callback is not None:
            callback(k, state)
        if change <= cfg.rel_tol:
            break
    logger.debug("stopped after %d iterations (rel change %.3g)", state.k, state.history[-1].rel_change)
    return Volume(state.v), state


def objective_value(state, ms, masks, lam, gamma, denoiser):
    """Diagnostic objective at ``state.v`` (not used for stopping).

    The prior term is skipped, with a warning, when the denoiser has no
    explicit regulariser (BM3D).
    """
    v = state.v if hasattr(state, "v") else np.asarray(state, dtype=np.float64)
    b = ms.data.astype(np.float64)
    m = masks.masks.astype(np.float64)
    total = 0.5 * float(np.sum((b - forward(v, m)) ** 2))
    priors = [denoiser.prior(v_n) for v_n in v]
    if any(p is None for p in priors):
        warnings.warn(f"{denoiser.kind} has no explicit prior; objective omits it",
                      RuntimeWarning, stacklevel=2)
    elif lam:
        total += lam * sum(priors)
    if gamma:
        total += 0.5 * gamma * temporal_penalty(v)
    return total


def temporal_penalty(v):
    """``sum_n ||v_n - v_{n-1}||^2`` with ``v_0 = v_NR`` (NR distinct terms)."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.sum((v - np.roll(v, 1, axis=0)) ** 2))
