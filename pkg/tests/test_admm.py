import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from cslsm.admm import (
    SolverConfig,
    objective_value,
    reconstruct,
    temporal_penalty,
    u_update_slice,
    v_update_shot,
)
from cslsm.denoisers import BM3D, TV, Tikhonov
from cslsm.errors import ConfigError, DenoiserError, DivergenceError
from cslsm.forward import EncodeConfig, encode, generate_masks
from cslsm.volume import MaskSet, MeasurementSet, Volume


def dense_v_update(b, g, masks, rho):
    """Assemble (Phi^T Phi + rho I) v = Phi^T b + rho g for one shot and solve it."""
    R, ny, nx = masks.shape
    phi = np.hstack([np.diag(m.ravel().astype(float)) for m in masks])
    lhs = phi.T @ phi + rho * np.eye(R * ny * nx)
    rhs = phi.T @ b.ravel() + rho * g.ravel()
    return np.linalg.solve(lhs, rhs).reshape(R, ny, nx)


@settings(max_examples=20)
@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(2, 16), st.integers(2, 16),
       st.sampled_from([0.01, 0.1, 1.0]))
def test_woodbury_matches_dense(seed, R, ny, nx, rho):
    rng = np.random.default_rng(seed)
    masks = (rng.random((R, ny, nx)) < 0.5).astype(np.uint8)
    b = rng.standard_normal((ny, nx))
    g = rng.standard_normal((R, ny, nx))
    assert np.abs(v_update_shot(b, g, masks, rho) - dense_v_update(b, g, masks, rho)).max() <= 1e-9


def test_zero_masks_return_prior():
    g = np.random.default_rng(0).random((3, 4, 4))
    assert np.array_equal(v_update_shot(np.ones((4, 4)), g, np.zeros((3, 4, 4)), 0.3), g)


def test_scalar_solve():
    out = v_update_shot(np.array([[2.0]]), np.zeros((1, 1, 1)), np.ones((1, 1, 1)), 1.0)
    assert out[0, 0, 0] == 1.0


def test_batched_matches_per_shot():
    rng = np.random.default_rng(1)
    masks = (rng.random((3, 5, 6)) < 0.5).astype(np.uint8)
    b = rng.standard_normal((4, 5, 6))
    g = rng.standard_normal((4, 3, 5, 6))
    batched = v_update_shot(b, g, masks, 0.2)
    for j in range(4):
        assert np.array_equal(batched[j], v_update_shot(b[j], g[j], masks, 0.2))


def test_u_update_tikhonov_closed_forms():
    rng = np.random.default_rng(2)
    v, d, up, un = rng.standard_normal((4, 5, 5))
    lam, rho, gamma = 0.3, 0.7, 0.4
    assert np.allclose(u_update_slice(v, d, up, un, lam, rho, 0.0, Tikhonov()),
                       rho * (v + d) / (2 * lam + rho), rtol=0, atol=1e-14)
    expect = (rho * (v + d) + gamma * (up + un)) / (2 * lam + rho + 2 * gamma)
    assert np.allclose(u_update_slice(v, d, up, un, lam, rho, gamma, Tikhonov()), expect, rtol=0, atol=1e-14)


def test_temporal_tikhonov_golden_section():
    rng = np.random.default_rng(3)
    v, d, up, un = rng.standard_normal((4, 4, 4))
    lam, rho, gamma = 0.25, 0.8, 0.6
    u = u_update_slice(v, d, up, un, lam, rho, gamma, Tikhonov())
    for idx in np.ndindex(4, 4):
        def f(x):
            return (lam * x * x + rho / 2 * (x - v[idx] - d[idx]) ** 2
                    + gamma / 2 * ((x - up[idx]) ** 2 + (un[idx] - x) ** 2))
        best = minimize_scalar(f, bracket=(-10, 10), method="golden", tol=1e-12).x
        assert abs(u[idx] - best) <= 1e-6


def test_zero_lambda_identity():
    rng = np.random.default_rng(4)
    v, d = rng.standard_normal((2, 12, 12))
    for den in (Tikhonov(), TV(), BM3D()):
        assert np.abs(u_update_slice(v, d, None, None, 0.0, 0.5, 0.0, den) - (v + d)).max() <= 1e-10


@pytest.mark.parametrize("denoiser,lam", [(Tikhonov(), 0.0152), (TV(), 0.0174), (BM3D(), 9.669)])
def test_gamma_zero_temporal_equals_slice(desk_r4, denoiser, lam):
    ms, masks = desk_r4
    cfg = SolverConfig(lam=lam, rho=0.0031, gamma=0.0, max_iters=10, rel_tol=1e-300, denoiser=denoiser)
    traces = {}
    for sweep in ("slice", "temporal"):
        seen = []
        reconstruct(ms, masks, cfg, sweep=sweep,
                    callback=lambda k, s: seen.append((s.v.copy(), s.u.copy(), s.d.copy())))
        traces[sweep] = seen
    assert len(traces["slice"]) == len(traces["temporal"]) == 10
    for a, b in zip(traces["slice"], traces["temporal"]):
        for x, y in zip(a, b):
            assert np.array_equal(x.view(np.uint64), y.view(np.uint64))


def test_identity_system_converges():
    v = np.random.default_rng(5).random((6, 8, 8))
    masks = MaskSet(np.ones((1, 8, 8), dtype=np.uint8), seed=0)
    ms = encode(Volume(v), EncodeConfig(1), masks)
    rec, state = reconstruct(ms, masks, SolverConfig(lam=0.0, rho=0.1))
    assert state.k <= 3
    assert state.history[-1].data_misfit <= 1e-8
    assert np.allclose(rec.data, ms.data, atol=1e-6)


def test_desk_tikhonov_convergence(desk_r4):
    ms, masks = desk_r4
    _, state = reconstruct(ms, masks, SolverConfig(lam=0.0152, rho=0.0010))
    changes = [h.rel_change for h in state.history]
    assert state.k <= 100 and changes[-1] <= 1e-3
    assert all(b < a for a, b in zip(changes[2:], changes[3:]))


@pytest.mark.parametrize("lam,rho", [(0.0152, 0.0010), (0.1, 0.1)])
def test_tikhonov_primal_residual_trend(desk_r4, lam, rho):
    ms, masks = desk_r4
    # tight tolerance so the full iteration budget is observed
    _, state = reconstruct(ms, masks, SolverConfig(lam=lam, rho=rho, rel_tol=1e-9))
    res = [h.primal_residual for h in state.history]
    assert np.isfinite(res).all()
    drops = sum(b < a for a, b in zip(res, res[1:]))
    assert drops >= 0.9 * (len(res) - 1)


def test_deterministic(desk_r4):
    ms, masks = desk_r4
    cfg = SolverConfig(lam=0.0987, rho=0.0114, gamma=0.001, max_iters=5, denoiser=TV())
    a, _ = reconstruct(ms, masks, cfg)
    b, _ = reconstruct(ms, masks, cfg)
    assert a == b


def test_zeros_init():
    v = np.random.default_rng(6).random((4, 8, 8))
    masks = generate_masks(8, 8, 2)
    ms = encode(Volume(v), EncodeConfig(2), masks)
    _, state = reconstruct(ms, masks, SolverConfig(lam=0.01, rho=0.1, max_iters=3, init="zeros"))
    assert state.k == 3


def test_divergence_detected():
    class Exploding:
        kind = "exploding"

        def __call__(self, g, lam, rho):
            return g * 1e200

    masks = generate_masks(8, 8, 2)
    ms = encode(Volume(np.ones((4, 8, 8))), EncodeConfig(2), masks)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergenceError) as info:
        reconstruct(ms, masks, SolverConfig(lam=1.0, rho=1.0, denoiser=Exploding()))
    assert info.value.iteration >= 1


def test_denoiser_failure_names_slice():
    class Broken:
        kind = "broken"

        def __call__(self, g, lam, rho):
            raise FloatingPointError("boom")

    masks = generate_masks(8, 8, 2)
    ms = encode(Volume(np.zeros((4, 8, 8))), EncodeConfig(2), masks)
    with pytest.raises(DenoiserError) as info:
        reconstruct(ms, masks, SolverConfig(lam=1.0, rho=1.0, gamma=0.1, denoiser=Broken()))
    assert info.value.slice == 1


@pytest.mark.parametrize("kw", [dict(rho=0.0), dict(gamma=-1.0), dict(lam=-1.0), dict(max_iters=0),
                                dict(rel_tol=0.0), dict(init="random")])
def test_config_validation(kw):
    base = dict(lam=0.1, rho=0.1)
    base.update(kw)
    with pytest.raises(ConfigError):
        SolverConfig(**base)


def test_slice_sweep_rejects_gamma(desk_r4):
    ms, masks = desk_r4
    with pytest.raises(ConfigError):
        reconstruct(ms, masks, SolverConfig(lam=0.1, rho=0.1, gamma=0.1), sweep="slice")


def test_noise_defaults():
    assert (SolverConfig.for_noise(True, lam=1, rho=1).max_iters, SolverConfig.for_noise(True, lam=1, rho=1).rel_tol) == (200, 1e-2)
    assert (SolverConfig.for_noise(False, lam=1, rho=1).max_iters, SolverConfig.for_noise(False, lam=1, rho=1).rel_tol) == (100, 1e-3)


def test_objective_terms():
    masks = MaskSet(np.ones((1, 1, 1), dtype=np.uint8), seed=0)
    zero = MeasurementSet(np.zeros((2, 1, 1)), 1, 0.0, 0, 0)
    assert objective_value(np.zeros((2, 1, 1)), zero, masks, 1.0, 1.0, Tikhonov()) == 0.0
    assert temporal_penalty(np.ones((3, 2, 2))) == 0.0
    v = np.array([1.0, 3.0]).reshape(2, 1, 1)
    ms = MeasurementSet(v, 1, 0.0, 0, 0)
    assert objective_value(v, ms, masks, 0.0, 2.0, Tikhonov()) == 8.0


def test_objective_warns_without_prior():
    masks = MaskSet(np.ones((1, 2, 2), dtype=np.uint8), seed=0)
    ms = MeasurementSet(np.zeros((1, 2, 2)), 1, 0.0, 0, 0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        objective_value(np.zeros((1, 2, 2)), ms, masks, 1.0, 0.0, BM3D())
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
