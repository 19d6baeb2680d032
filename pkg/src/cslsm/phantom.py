"""Synthetic heart-like ground truth: two ellipsoidal chamber shells with
Gaussian nuclei scattered on their surfaces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .volume import Volume


@dataclass(frozen=True)
class Chamber:
    center: tuple  # (x, y, z) in voxels
    semi_axes: tuple  # (ax, ay, az) in voxels
    thickness: float = 2.0

    def surface_area(self):
        # Knud Thomsen's approximation
        a, b, c = self.semi_axes
        p = 1.6075
        return 4 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3) ** (1 / p)


def default_chambers(nx, ny, nz, thickness=2.0):
    """Atrium and ventricle scaled to the volume; always inside the bounds."""
    atrium = Chamber((0.36 * nx, 0.40 * ny, 0.5 * nz), (0.20 * nx, 0.18 * ny, 0.30 * nz), thickness)
    ventricle = Chamber((0.64 * nx, 0.60 * ny, 0.5 * nz), (0.22 * nx, 0.20 * ny, 0.34 * nz), thickness)
    return (atrium, ventricle)


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 64
    ny: int = 64
    nz: int = 40
    nuclei_count: int = 60
    nucleus_radius: float = 2.0
    nucleus_radius_spread: float = 0.3
    chambers: tuple = None
    chamber_intensity: float = 0.1
    background_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.chambers is None:
            object.__setattr__(self, "chambers", default_chambers(self.nx, self.ny, self.nz))
        self.validate()

    def validate(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigError("phantom dimensions must be positive")
        if self.nuclei_count < 0:
            raise ConfigError("nuclei_count must be >= 0")
        if not self.nucleus_radius > 0 or self.nucleus_radius_spread < 0:
            raise ConfigError("nucleus radius must be > 0 and spread >= 0")
        if not 0 <= self.background_level < 1:
            raise ConfigError("background_level must lie in [0, 1)")
        if self.chamber_intensity < 0:
            raise ConfigError("chamber_intensity must be >= 0")
        if len(self.chambers) != 2:
            raise ConfigError("exactly two chambers (atrium, ventricle) are required")
        dims = (self.nx, self.ny, self.nz)
        for ch in self.chambers:
            if min(ch.semi_axes) <= 0 or ch.thickness <= 0:
                raise ConfigError("chamber semi-axes and thickness must be positive")
            for c, a, n in zip(ch.center, ch.semi_axes, dims):
                if c - a - ch.thickness < 0 or c + a + ch.thickness > n - 1:
                    raise ConfigError(f"chamber {ch} does not fit inside {dims}")


FULL_SCALE_SPEC = dict(nx=200, ny=200, nz=150, nuclei_count=300, nucleus_radius=3.0)


def _surface_points(rng, chamber, count):
    """Area-uniform points on an ellipsoid by rejection from the unit sphere."""
    a = np.asarray(chamber.semi_axes, dtype=np.float64)
    scale = np.array([a[1] * a[2], a[0] * a[2], a[0] * a[1]])
    out = np.empty((0, 3))
    while len(out) < count:
        u = rng.standard_normal((2 * count + 8, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        density = np.linalg.norm(u * scale, axis=1) / scale.max()
        keep = rng.random(len(u)) < density
        out = np.vstack([out, u[keep] * a + np.asarray(chamber.center)])
    return out[:count]


def _jitter(rng, count, radius):
    """Uniform samples inside a ball of the given radius."""
    d = rng.standard_normal((count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.random((count, 1)) ** (1 / 3)


def nucleus_centers(spec):
    """Nucleus centres ``(x, y, z)`` and radii, as drawn by :func:`generate_phantom`."""
    rng = np.random.default_rng(spec.seed)
    areas = np.array([ch.surface_area() for ch in spec.chambers])
    owner = rng.choice(len(spec.chambers), size=spec.nuclei_count, p=areas / areas.sum())
    centers = np.empty((spec.nuclei_count, 3))
    for k, ch in enumerate(spec.chambers):
        idx = np.flatnonzero(owner == k)
        pts = _surface_points(rng, ch, len(idx))
        centers[idx] = pts + _jitter(rng, len(idx), ch.thickness)
    radii = spec.nucleus_radius + spec.nucleus_radius_spread * rng.standard_normal(spec.nuclei_count)
    radii = np.maximum(radii, 0.5 * spec.nucleus_radius)
    return centers, radii


def chamber_shells(spec):
    """Indicator of both chamber walls, shape (nz, ny, nx)."""
    z, y, x = np.meshgrid(
        np.arange(spec.nz), np.arange(spec.ny), np.arange(spec.nx), indexing="ij"
    )
    shells = np.zeros((spec.nz, spec.ny, spec.nx), dtype=bool)
    for ch in spec.chambers:
        (cx, cy, cz), (ax, ay, az) = ch.center, ch.semi_axes
        rad = np.sqrt(((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2)
        # radial distance to the surface, approximated with the mean semi-axis
        shells |= np.abs(rad - 1.0) * np.mean(ch.semi_axes) <= ch.thickness / 2
    return shells


def render_nuclei(spec, centers, radii):
    out = np.zeros((spec.nz, spec.ny, spec.nx))
    axes = (np.arange(spec.nx), np.arange(spec.ny), np.arange(spec.nz))
    for c, r in zip(centers, radii):
        sd = r / 2
        reach = int(np.ceil(4 * sd))
        lo = [max(0, int(np.floor(c[i])) - reach) for i in range(3)]
        hi = [min(len(axes[i]), int(np.floor(c[i])) + reach + 2) for i in range(3)]
        gx = np.exp(-((axes[0][lo[0]:hi[0]] - c[0]) ** 2) / (2 * sd * sd))
        gy = np.exp(-((axes[1][lo[1]:hi[1]] - c[1]) ** 2) / (2 * sd * sd))
        gz = np.exp(-((axes[2][lo[2]:hi[2]] - c[2]) ** 2) / (2 * sd * sd))
        out[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]] += gz[:, None, None] * gy[None, :, None] * gx[None, None, :]
    return out


def generate_phantom(spec, return_centers=False):
    """Render the phantom as a :class:`Volume` in [0, 1].

    Deterministic in ``spec`` (including its seed). With ``return_centers`` the
    nucleus centres ``(x, y, z)`` are returned as a second value.
    """
    spec.validate()
    centers, radii = nucleus_centers(spec)
    vol = np.full((spec.nz, spec.ny, spec.nx), float(spec.background_level))
    vol += spec.chamber_intensity * chamber_shells(spec)
    vol += render_nuclei(spec, centers, radii)
    volume = Volume(np.clip(vol, 0.0, 1.0))
    if return_centers:
        return volume, centers
    return volume


def write_centers(centers, path):
    np.savetxt(path, np.asarray(centers), fmt="%.6f")


def select_frames(v, count=40):
    """Keep ``count`` slices at 1-based indices ``round(linspace(1, nz, count))``."""
    if not 1 <= count <= v.nz:
        raise ConfigError(f"frame count {count} outside 1..{v.nz}")
    idx = frame_indices(v.nz, count)
    return Volume(v.data[idx - 1])


def frame_indices(nz, count):
    """1-based slice indices chosen by :func:`select_frames` (half rounds up)."""
    return np.floor(np.linspace(1, nz, count) + 0.5).astype(np.int64)
