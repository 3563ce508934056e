"""Cone-beam forward projection of voxel volumes.

Line integrals are evaluated by fixed-step midpoint ray marching through the
volume's bounding box with trilinear sampling. The inner loop runs in a
compiled Cython kernel when it was built; otherwise a vectorized numpy
version with the same arithmetic is used. Set ``MR2XRAY_BACKEND=python`` to
force the fallback.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mr2xray.geometry import ConeBeamGeometry, Ray, Trajectory, ViewPose, view_rays
from mr2xray.projector import _raymarch_py

try:
    from mr2xray.projector import _raymarch as _compiled
except ImportError:  # extension not built
    _compiled = None

__all__ = [
    "Volume",
    "ProjectionImage",
    "ProjectionSet",
    "available_backends",
    "default_backend",
    "line_integral",
    "project_rays",
    "project_view",
    "project_trajectory",
]


def available_backends():
    return ("compiled", "python") if _compiled is not None else ("python",)


def default_backend():
    requested = os.environ.get("MR2XRAY_BACKEND", "auto").lower()
    if requested == "python":
        return "python"
    if requested == "compiled" and _compiled is None:
        raise RuntimeError("MR2XRAY_BACKEND=compiled but the extension is not built")
    return "compiled" if _compiled is not None else "python"


def _kernel(backend):
    backend = backend or default_backend()
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled projector backend is not available")
        return _compiled.march_rays
    if backend == "python":
        return _raymarch_py.march_rays
    raise ValueError(f"unknown backend {backend!r}")


@dataclass
class Volume:
    """Scalar voxel grid. ``data`` is indexed [z, y, x] (x fastest in memory)."""

    data: np.ndarray
    spacing_mm: tuple = (1.0, 1.0, 1.0)
    origin_mm: tuple | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError("volume data must be a non-empty 3D array")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise ValueError("spacing_mm must hold three positive values")
        if self.origin_mm is None:
            # center the grid on the isocenter
            self.origin_mm = tuple(-(n - 1) / 2.0 * s for n, s in zip(self.dims, self.spacing_mm))
        self.origin_mm = tuple(float(o) for o in self.origin_mm)
        if not np.isfinite(self.data).all():
            raise ValueError("volume contains non-finite values")

    @property
    def dims(self):
        """Voxel counts as (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def voxel_centers(self):
        """World coordinates of voxel centers as three 1D arrays (x, y, z)."""
        return tuple(
            o + s * np.arange(n) for o, s, n in zip(self.origin_mm, self.spacing_mm, self.dims)
        )

    def same_grid(self, other):
        return (
            self.dims == other.dims
            and self.spacing_mm == other.spacing_mm
            and self.origin_mm == other.origin_mm
        )


@dataclass
class ProjectionImage:
    data: np.ndarray
    pose: ViewPose
    geometry_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("projection image must be 2D")
        if not np.isfinite(self.data).all():
            raise ValueError("projection image values must be finite")

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]


@dataclass
class ProjectionSet:
    geometry: ConeBeamGeometry
    trajectory: Trajectory
    images: list = field(default_factory=list)
    subject_id: str = ""
    channel: str = "xray"

    def __post_init__(self):
        if self.channel not in ("mr", "xray"):
            raise ValueError(f"channel must be 'mr' or 'xray', got {self.channel!r}")
        if len(self.images) != len(self.trajectory):
            raise ValueError("need exactly one image per trajectory pose")
        shapes = {im.data.shape for im in self.images}
        if len(shapes) > 1:
            raise ValueError("all images of a projection set must share dimensions")

    def __len__(self):
        return len(self.images)

    def stack(self):
        return np.stack([im.data for im in self.images])


def _check_step(step_mm):
    if not (math.isfinite(step_mm) and step_mm > 0):
        raise ValueError(f"step_mm must be finite and positive, got {step_mm}")


def default_step(vol):
    return min(vol.spacing_mm) / 2.0


def project_rays(vol, origins, directions, step_mm=None, backend=None):
    """Line integrals for a batch of rays given as (..., 3) arrays."""
    step_mm = default_step(vol) if step_mm is None else float(step_mm)
    _check_step(step_mm)
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    shape = origins.shape[:-1]
    o = np.ascontiguousarray(origins.reshape(-1, 3))
    d = np.ascontiguousarray(directions.reshape(-1, 3))
    if not (np.isfinite(o).all() and np.isfinite(d).all()):
        raise ValueError("ray origins and directions must be finite")
    out = np.zeros(o.shape[0], dtype=np.float64)
    _kernel(backend)(
        vol.data,
        np.asarray(vol.origin_mm, dtype=np.float64),
        np.asarray(vol.spacing_mm, dtype=np.float64),
        o,
        d,
        step_mm,
        out,
    )
    return out.reshape(shape)


def line_integral(vol, ray, step_mm=None, backend=None):
    """Integral of the volume along one ray; 0 when the ray misses the volume."""
    if isinstance(ray, Ray):
        o, d = ray.origin_mm, ray.direction
    else:
        o, d = ray
    return float(project_rays(vol, np.array([o]), np.array([d]), step_mm, backend)[0])


def project_view(vol, geom, pose, step_mm=None, backend=None):
    origins, directions = view_rays(geom, pose)
    img = project_rays(vol, origins, directions, step_mm, backend)
    return ProjectionImage(img.astype(np.float32), pose, geom.geometry_id)


def project_trajectory(vol, geom, traj, step_mm=None, backend=None, threads=1,
                       subject_id="", channel="xray"):
    """Project every pose of a trajectory, preserving pose order.

    Views are independent; with ``threads > 1`` they run on a thread pool
    (the compiled kernel releases the GIL). Output does not depend on the
    thread count.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            images = list(pool.map(lambda p: project_view(vol, geom, p, step_mm, backend), traj))
    else:
        images = [project_view(vol, geom, p, step_mm, backend) for p in traj]
    return ProjectionSet(geom, traj, images, subject_id=subject_id, channel=channel)
