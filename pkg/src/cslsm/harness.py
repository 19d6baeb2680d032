"""Experiment plans: phantom -> encode -> (tune) -> reconstruct -> evaluate.

A plan is read from a line-oriented ``key = value`` file (``#`` starts a
comment; list values are comma-separated; paths are relative to the file).
Results go to ``<output_dir>/results.csv`` (one row per method x mode x
ratio x noise, deterministic fields only) and wall times to
``<output_dir>/timings.csv``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .admm import SolverConfig, reconstruct
from .denoisers import make_denoiser
from .errors import ConfigError, CslsmError, DivergenceError
from .forward import DEFAULT_MASK_SEED, DEFAULT_NOISE_SEED, EncodeConfig, encode, generate_masks
from .metrics import format_float, psnr, ssim
from .phantom import FULL_SCALE_SPEC, PhantomSpec, generate_phantom, select_frames
from .tuner import SearchSpace, tune
from .volume import (
    export_slice_pgm,
    read_masks,
    read_measurements,
    read_volume,
    write_masks,
    write_measurements,
)

logger = logging.getLogger(__name__)

METHODS = ("tikhonov", "tv", "bm3d")
MODES = ("slice", "temporal")
ALL_CELLS = tuple((m, mode) for mode in MODES for m in METHODS)

# Reference optimum (lambda, rho, gamma) for a 200x200x150 synthetic volume;
# used when a plan asks for explicit parameters without a parameter file.
REFERENCE_PARAMS = {
    ("tikhonov", "slice", False): (0.0152, 0.0010, 0.0),
    ("tv", "slice", False): (0.0174, 0.0010, 0.0),
    ("bm3d", "slice", False): (9.6690, 0.0031, 0.0),
    ("tikhonov", "temporal", False): (0.0070, 0.1000, 0.5959),
    ("tv", "temporal", False): (0.0987, 0.0114, 0.0010),
    ("bm3d", "temporal", False): (9.4132, 0.0960, 0.0010),
    ("tikhonov", "slice", True): (0.0994, 0.0985, 0.0),
    ("tv", "slice", True): (0.0479, 0.0998, 0.0),
    ("bm3d", "slice", True): (17.4716, 0.0998, 0.0),
    ("tikhonov", "temporal", True): (0.0998, 0.0939, 0.9882),
    ("tv", "temporal", True): (0.0999, 0.0996, 0.0317),
    ("bm3d", "temporal", True): (18.9113, 0.0999, 0.6745),
}

RESULT_COLUMNS = [
    "method", "mode", "ratio", "noise_variance", "psnr_db", "ssim", "iterations",
    "converged", "lambda", "rho", "gamma", "phantom_seed", "mask_seed", "noise_seed",
    "status",
]
TIMING_COLUMNS = ["method", "mode", "ratio", "noise_variance", "tune_seconds", "tune_cached", "seconds"]
TUNE_COLUMNS = ["eval", "lambda", "rho", "gamma", "psnr_db", "seconds"]


@dataclass(frozen=True)
class ExperimentPlan:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    phantom_file: Path | None = None
    frames: int = 40
    methods: tuple = ALL_CELLS
    ratios: tuple = (2, 4, 10, 20)
    noise: tuple = (0.0, 1e-3)
    params: str = "tuned"
    params_file: Path | None = None
    budget: int = 50
    tune_seed: int = 0
    tune_ratio: int | None = None
    mask_seed: int = DEFAULT_MASK_SEED
    noise_seed: int = DEFAULT_NOISE_SEED
    mask_density: float = 0.5
    init: str = "adjoint"
    tv_inner_iters: int = 50
    tv_inner_tol: float = 1e-4
    bm3d_two_stage: bool = False
    export_slice: int = 17
    output_dir: Path = Path("results")

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("plan needs at least one method")
        for kind, mode in self.methods:
            if kind not in METHODS or mode not in MODES:
                raise ConfigError(f"unknown method {kind}:{mode}")
        if self.params not in ("explicit", "tuned"):
            raise ConfigError("params must be 'explicit' or 'tuned'")
        if not 1 <= self.frames:
            raise ConfigError("frames must be >= 1")
        for r in self.ratios:
            if r < 1 or self.frames % r:
                raise ConfigError(f"ratio {r} does not divide the frame count {self.frames}")
        if self.tune_ratio is not None and self.frames % self.tune_ratio:
            raise ConfigError(f"tune_ratio {self.tune_ratio} does not divide {self.frames}")
        if any(not s >= 0 for s in self.noise):
            raise ConfigError("noise variances must be >= 0")

    def denoiser(self, kind):
        if kind == "tv":
            return make_denoiser("tv", inner_iters=self.tv_inner_iters, inner_tol=self.tv_inner_tol)
        if kind == "bm3d":
            return make_denoiser("bm3d", two_stage=self.bm3d_two_stage)
        return make_denoiser(kind)


# -- config parsing -------------------------------------------------------------


def _int(s):
    return int(s)


def _float(s):
    return float(s)


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    return lambda s: tuple(conv(x.strip()) for x in s.split(",") if x.strip())


def _methods(s):
    out = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, mode = item.partition(":")
        modes = (mode,) if mode else MODES
        out.extend((kind.strip(), m.strip()) for m in modes)
    return tuple(out)


def _choice(*options):
    def conv(s):
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s
    return conv


def _tune_ratio(s):
    return None if s == "each" else int(s)


_PHANTOM_KEYS = {
    "nx": ("nx", _int), "ny": ("ny", _int), "nz": ("nz", _int),
    "nuclei": ("nuclei_count", _int), "nucleus_radius": ("nucleus_radius", _float),
    "phantom_seed": ("seed", _int), "chamber_intensity": ("chamber_intensity", _float),
    "background": ("background_level", _float),
}
_PLAN_KEYS = {
    "phantom": _choice("desk", "full"),
    "phantom_file": str,
    "frames": _int,
    "methods": _methods,
    "ratio": _list(_int),
    "noise": _list(_float),
    "params": _choice("explicit", "tuned"),
    "params_file": str,
    "budget": _int,
    "tune_seed": _int,
    "tune_ratio": _tune_ratio,
    "mask_seed": _int,
    "noise_seed": _int,
    "mask_density": _float,
    "init": _choice("adjoint", "zeros"),
    "tv_inner_iters": _int,
    "tv_inner_tol": _float,
    "bm3d_two_stage": _bool,
    "export_slice": _int,
    "output_dir": str,
}
VALID_KEYS = tuple(sorted(set(_PLAN_KEYS) | set(_PHANTOM_KEYS)))


def parse_config(path):
    """Read an :class:`ExperimentPlan` from a ``key = value`` file."""
    path = Path(path)
    base = path.resolve().parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    seen = {}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: malformed line (expected 'key = value')")
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in _PLAN_KEYS and key not in _PHANTOM_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        conv = _PHANTOM_KEYS[key][1] if key in _PHANTOM_KEYS else _PLAN_KEYS[key]
        try:
            values[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None

    try:
        return _build_plan(values, base)
    except ConfigError as exc:
        line = next((seen[k] for k in ("ratio", "frames", "tune_ratio") if k in seen), None)
        where = f"{path}:{line}: " if line and "divide" in str(exc) else f"{path}: "
        raise ConfigError(where + str(exc)) from None


def _build_plan(values, base):
    phantom_kw = dict(FULL_SCALE_SPEC) if values.pop("phantom", "desk") == "full" else {}
    for key, (name, _) in _PHANTOM_KEYS.items():
        if key in values:
            phantom_kw[name] = values.pop(key)
    kw = {}
    for key in ("phantom_file", "params_file", "output_dir"):
        if key in values:
            kw[key] = (base / values.pop(key)).resolve()
    kw.setdefault("output_dir", (base / "results").resolve())
    if "ratio" in values:
        kw["ratios"] = values.pop("ratio")
    kw.update(values)
    return ExperimentPlan(phantom=PhantomSpec(**phantom_kw), **kw)


def read_params_file(path):
    """``method,mode,noise_variance,lambda,rho,gamma`` rows -> dict."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["mode"], float(row["noise_variance"]) > 0)
            out[key] = (float(row["lambda"]), float(row["rho"]), float(row["gamma"]))
    return out


# -- running ------------------------------------------------------------------------


def ground_truth(plan):
    if plan.phantom_file is not None:
        vol = read_volume(plan.phantom_file)
    else:
        vol = generate_phantom(plan.phantom)
    if vol.nz != plan.frames:
        vol = select_frames(vol, plan.frames)
    return vol


class MeasurementCache:
    """On-disk cache of encoded shots keyed by every seed, R and noise variance."""

    def __init__(self, root, phantom_seed):
        self.root = Path(root)
        self.phantom_seed = phantom_seed
        self.hits = 0
        self.misses = 0

    def _paths(self, plan, ratio, noise):
        stem = (f"p{self.phantom_seed}_m{plan.mask_seed}_n{plan.noise_seed}_R{ratio}"
                f"_s{noise!r}_d{plan.mask_density!r}")
        return self.root / f"{stem}.cslb", self.root / f"{stem}.cslm"

    def get(self, truth, plan, ratio, noise):
        meas_path, mask_path = self._paths(plan, ratio, noise)
        if meas_path.exists() and mask_path.exists():
            self.hits += 1
            return read_measurements(meas_path), read_masks(mask_path)
        self.misses += 1
        masks = generate_masks(truth.nx, truth.ny, ratio, plan.mask_density, plan.mask_seed)
        cfg = EncodeConfig(ratio, plan.mask_density, plan.mask_seed, noise, plan.noise_seed)
        ms = encode(truth, cfg, masks)
        self.root.mkdir(parents=True, exist_ok=True)
        write_measurements(ms, meas_path)
        write_masks(masks, mask_path)
        return ms, masks


def solver_config(plan, kind, mode, noisy, lam, rho, gamma, max_iters=None):
    cfg = SolverConfig.for_noise(
        noisy, lam=lam, rho=rho, gamma=gamma if mode == "temporal" else 0.0,
        denoiser=plan.denoiser(kind), init=plan.init,
    )
    if max_iters is not None:
        cfg = replace(cfg, max_iters=max_iters)
    return cfg


def tune_cell(plan, truth, ms, masks, kind, mode, noisy, callback=None):
    """Tune (lambda, rho, gamma) for one cell at half the iteration budget."""
    space = SearchSpace.for_method(kind, mode == "temporal", plan.budget, plan.tune_seed)
    full = SolverConfig.for_noise(noisy, lam=0.0, rho=1.0)
    short = max(1, full.max_iters // 2)

    def objective(p):
        cfg = solver_config(plan, kind, mode, noisy, p["lambda"], p["rho"],
                            p.get("gamma", 0.0), max_iters=short)
        try:
            rec, _ = reconstruct(ms, masks, cfg)
        except DivergenceError:
            return -math.inf
        return psnr(truth, rec)

    return tune(objective, space, callback=callback)


def write_tune_trace(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TUNE_COLUMNS)
        for i, t in enumerate(result.trace, start=1):
            w.writerow([i, format_float(t.params["lambda"]), format_float(t.params["rho"]),
                        format_float(t.params.get("gamma", 0.0)), format_float(t.value),
                        format_float(t.seconds)])


def _noise_tag(noise):
    return "clean" if noise == 0 else f"noisy{noise:g}"


def _cell_key(row):
    return (row["method"], row["mode"], str(row["ratio"]), str(row["noise_variance"]))


def _merge_csv(path, columns, rows):
    """Rewrite ``path`` with ``rows`` replacing any existing rows of the same cell."""
    existing = []
    if path.exists():
        with open(path, newline="") as fh:
            existing = list(csv.DictReader(fh))
    new_keys = {_cell_key(r) for r in rows}
    merged = [r for r in existing if _cell_key(r) not in new_keys] + rows
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in merged:
            w.writerow({c: r.get(c, "") for c in columns})
    tmp.replace(path)


def _tuned_cache_path(plan, out):
    return out / "tuning" / "tuned_params.csv"


def _load_tuned(path):
    """Cached tuned parameters: key -> (lambda, rho, gamma, tuning seconds)."""
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {row["key"]: tuple(float(row[c]) for c in ("lambda", "rho", "gamma", "seconds"))
                for row in csv.DictReader(fh)}


def _save_tuned(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "lambda", "rho", "gamma", "seconds"])
        for key in sorted(table):
            w.writerow([key, *(format_float(x) for x in table[key])])


def _tune_key(plan, kind, mode, noise, ratio):
    p = plan.phantom
    return (f"{kind}|{mode}|{noise!r}|R{ratio}|b{plan.budget}|t{plan.tune_seed}"
            f"|p{p.seed}:{p.nx}x{p.ny}x{p.nz}:{p.nuclei_count}:{p.nucleus_radius!r}"
            f"|f{plan.frames}|m{plan.mask_seed}|n{plan.noise_seed}|d{plan.mask_density!r}"
            f"|{plan.init}|tv{plan.tv_inner_iters}:{plan.tv_inner_tol!r}|bm{int(plan.bm3d_two_stage)}"
            f"|src{plan.phantom_file}")


def run_experiment(plan, progress=None):
    """Run every (method, mode, ratio, noise) cell; returns the result rows.

    A failing cell is recorded with its status and the sweep continues.
    Tuned parameters (and the tuning wall time) are cached in
    ``tuning/tuned_params.csv`` under a key covering every input that
    influences them, so a re-run only repeats the reconstructions.
    """
    out = Path(plan.output_dir)
    (out / "slices").mkdir(parents=True, exist_ok=True)
    (out / "tuning").mkdir(parents=True, exist_ok=True)
    truth = ground_truth(plan)
    cache = MeasurementCache(out / "cache", plan.phantom.seed)
    explicit = read_params_file(plan.params_file) if plan.params_file else REFERENCE_PARAMS
    tuned_path = _tuned_cache_path(plan, out)
    tuned = _load_tuned(tuned_path)
    rows, timings = [], []

    for noise in plan.noise:
        noisy = noise > 0
        for ratio in plan.ratios:
            for kind, mode in plan.methods:
                row = {
                    "method": kind, "mode": mode, "ratio": ratio,
                    "noise_variance": format_float(noise),
                    "phantom_seed": plan.phantom.seed, "mask_seed": plan.mask_seed,
                    "noise_seed": plan.noise_seed,
                }
                tune_seconds, tune_cached = 0.0, 0
                start = time.perf_counter()
                try:
                    ms, masks = cache.get(truth, plan, ratio, noise)
                    if plan.params == "explicit":
                        if (kind, mode, noisy) not in explicit:
                            raise ConfigError(f"no explicit parameters for {kind}:{mode}")
                        lam, rho, gamma = explicit[(kind, mode, noisy)]
                    else:
                        t_ratio = plan.tune_ratio or ratio
                        key = _tune_key(plan, kind, mode, noise, t_ratio)
                        if key not in tuned:
                            t0 = time.perf_counter()
                            t_ms, t_masks = cache.get(truth, plan, t_ratio, noise)
                            res = tune_cell(plan, truth, t_ms, t_masks, kind, mode, noisy)
                            p = res.best_params
                            tuned[key] = (p["lambda"], p["rho"], p.get("gamma", 0.0),
                                          time.perf_counter() - t0)
                            _save_tuned(tuned_path, tuned)
                            write_tune_trace(res, out / "tuning" /
                                             f"{kind}_{mode}_R{t_ratio}_{_noise_tag(noise)}.csv")
                        else:
                            tune_cached = 1
                        lam, rho, gamma, tune_seconds = tuned[key]
                    if mode == "slice":
                        gamma = 0.0
                    cfg = solver_config(plan, kind, mode, noisy, lam, rho, gamma)
                    t0 = time.perf_counter()
                    rec, state = reconstruct(ms, masks, cfg)
                    seconds = time.perf_counter() - t0
                    n = min(max(plan.export_slice, 1), rec.nz)
                    export_slice_pgm(rec.slice(n), out / "slices" /
                                     f"{kind}_{mode}_R{ratio}_{_noise_tag(noise)}_z{n}.pgm")
                    row.update(
                        psnr_db=format_float(psnr(truth, rec)), ssim=format_float(ssim(truth, rec)),
                        iterations=state.k,
                        converged=int(state.history[-1].rel_change <= cfg.rel_tol),
                        status="ok",
                    )
                    row.update({"lambda": format_float(lam), "rho": format_float(rho),
                                "gamma": format_float(gamma)})
                except DivergenceError as exc:
                    seconds = time.perf_counter() - start
                    row["status"] = f"diverged at iteration {exc.iteration}"
                except (CslsmError, OSError, ValueError) as exc:
                    seconds = time.perf_counter() - start
                    row["status"] = f"error: {exc}"
                    logger.exception("cell %s:%s R=%s noise=%s failed", kind, mode, ratio, noise)
                rows.append(row)
                timings.append({
                    "method": kind, "mode": mode, "ratio": ratio,
                    "noise_variance": row["noise_variance"],
                    "tune_seconds": format_float(tune_seconds), "tune_cached": tune_cached,
                    "seconds": format_float(seconds),
                })
                if progress is not None:
                    progress(row)
    _merge_csv(out / "results.csv", RESULT_COLUMNS, [{k: str(v) for k, v in r.items()} for r in rows])
    _merge_csv(out / "timings.csv", TIMING_COLUMNS, [{k: str(v) for k, v in r.items()} for r in timings])
    return rows


def read_results(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
