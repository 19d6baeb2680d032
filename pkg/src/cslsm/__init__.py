"""Compressive light-sheet reconstruction with plug-and-play ADMM."""

__version__ = "0.1.0"

from .admm import SolverConfig, reconstruct, v_update_shot, u_update_slice  # noqa: E402
from .denoisers import BM3D, TV, Tikhonov, make_denoiser  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    CslsmError,
    DenoiserError,
    DivergenceError,
    FileFormatError,
)
from .forward import EncodeConfig, adjoint, encode, forward, generate_masks  # noqa: E402
from .harness import ExperimentPlan, parse_config, run_experiment  # noqa: E402
from .metrics import MetricsReport, psnr, ssim, ssim2d, ssim3d  # noqa: E402
from .phantom import PhantomSpec, generate_phantom, select_frames  # noqa: E402
from .tuner import SearchSpace, TuneResult, tune  # noqa: E402
from .volume import MaskSet, MeasurementSet, Volume  # noqa: E402

__all__ = [
    "BM3D", "ConfigError", "CslsmError", "DenoiserError", "DivergenceError", "EncodeConfig",
    "ExperimentPlan", "FileFormatError", "MaskSet", "MeasurementSet", "MetricsReport",
    "PhantomSpec", "SearchSpace", "SolverConfig", "TV", "Tikhonov", "TuneResult", "Volume",
    "adjoint", "encode", "forward", "generate_masks", "generate_phantom", "make_denoiser",
    "parse_config", "psnr", "reconstruct", "run_experiment", "select_frames", "ssim", "ssim2d",
    "ssim3d", "tune", "u_update_slice", "v_update_shot",
]
