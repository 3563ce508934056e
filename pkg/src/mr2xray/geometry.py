"""Imaging geometry: C-arm style cone-beam setup, view poses, rays, trajectories.

World frame is right-handed with the isocenter at the origin and +z along the
patient (axial) axis. Azimuth rotates the source in the transversal x-y
plane starting from +x; inclination tilts it toward +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BEAM_MODES = ("cone", "parallel")
GEOMETRY_KEYS = ("sad_mm", "sdd_mm", "det_rows", "det_cols", "det_spacing_mm", "beam_mode")


class UnsupportedModeError(ValueError):
    pass


def _cos_sin_deg(angle_deg):
    """Cosine and sine of an angle in degrees, exact at multiples of 90."""
    quadrant, rest = divmod(float(angle_deg), 90.0)
    r = math.radians(rest)
    c, s = math.cos(r), math.sin(r)
    q = int(quadrant) % 4
    if q == 0:
        return c, s
    if q == 1:
        return -s, c
    if q == 2:
        return -c, -s
    return s, -c


@dataclass(frozen=True)
class ConeBeamGeometry:
    sad_mm: float = 785.0
    sdd_mm: float = 1200.0
    det_rows: int = 256
    det_cols: int = 256
    det_spacing_mm: float = 1.2
    beam_mode: str = "cone"

    def __post_init__(self):
        if self.beam_mode not in BEAM_MODES:
            raise ValueError(f"beam_mode must be one of {BEAM_MODES}, got {self.beam_mode!r}")
        if not self.sad_mm > 0:
            raise ValueError("sad_mm must be positive")
        if self.beam_mode == "cone" and not self.sdd_mm > self.sad_mm:
            raise ValueError("sdd_mm must exceed sad_mm in cone mode")
        if self.det_rows < 1 or self.det_cols < 1:
            raise ValueError("detector needs at least one row and column")
        if not self.det_spacing_mm > 0:
            raise ValueError("det_spacing_mm must be positive")

    @property
    def magnification(self):
        if self.beam_mode == "parallel":
            return 1.0
        return self.sdd_mm / self.sad_mm

    def to_text(self):
        """Serialize as the flat key=value block used in projection manifests."""
        values = {
            "sad_mm": repr(float(self.sad_mm)),
            "sdd_mm": repr(float(self.sdd_mm)),
            "det_rows": str(int(self.det_rows)),
            "det_cols": str(int(self.det_cols)),
            "det_spacing_mm": repr(float(self.det_spacing_mm)),
            "beam_mode": self.beam_mode,
        }
        return "".join(f"{k}={values[k]}\n" for k in GEOMETRY_KEYS)

    @classmethod
    def from_text(cls, text):
        items = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            items[key.strip()] = value.strip()
        missing = [k for k in GEOMETRY_KEYS if k not in items]
        if missing:
            raise ValueError(f"geometry block missing keys: {missing}")
        return cls(
            sad_mm=float(items["sad_mm"]),
            sdd_mm=float(items["sdd_mm"]),
            det_rows=int(items["det_rows"]),
            det_cols=int(items["det_cols"]),
            det_spacing_mm=float(items["det_spacing_mm"]),
            beam_mode=items["beam_mode"],
        )

    @property
    def geometry_id(self):
        import hashlib

        return hashlib.sha1(self.to_text().encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ViewPose:
    """A source position on the sphere around the isocenter.

    Azimuths outside [0, 360) are wrapped on construction.
    """

    azimuth_deg: float
    inclination_deg: float = 0.0

    def __post_init__(self):
        az = float(self.azimuth_deg)
        inc = float(self.inclination_deg)
        if not (math.isfinite(az) and math.isfinite(inc)):
            raise ValueError("pose angles must be finite")
        if not -90.0 <= inc <= 90.0:
            raise ValueError(f"inclination_deg must lie in [-90, 90], got {inc}")
        az = az % 360.0
        if az == 360.0:  # tiny negative inputs round up
            az = 0.0
        object.__setattr__(self, "azimuth_deg", az)
        object.__setattr__(self, "inclination_deg", inc)


@dataclass(frozen=True)
class Ray:
    origin_mm: tuple
    direction: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")


@dataclass(frozen=True)
class Trajectory:
    poses: tuple
    label: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("trajectory must contain at least one pose")
        if self.label not in ("train", "test", "custom"):
            raise ValueError(f"unknown trajectory label {self.label!r}")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]


def make_training_trajectory(n_azimuth=30, n_inclination=15, incl_range_deg=20.0):
    """Equiangular grid over azimuth and inclination.

    Azimuths are spaced 360/n_azimuth apart starting at 0. Inclinations span
    [-incl_range_deg, +incl_range_deg] inclusive; a single inclination sits
    at 0. The defaults give the 450-view training distribution.
    """
    if int(n_azimuth) != n_azimuth or n_azimuth < 1:
        raise ValueError("n_azimuth must be a positive integer")
    if int(n_inclination) != n_inclination or n_inclination < 1:
        raise ValueError("n_inclination must be a positive integer")
    if not 0.0 <= incl_range_deg <= 90.0:
        raise ValueError("incl_range_deg must lie in [0, 90]")
    azimuths = [360.0 * k / n_azimuth for k in range(int(n_azimuth))]
    if n_inclination == 1:
        inclinations = [0.0]
    else:
        inclinations = [
            -incl_range_deg + 2.0 * incl_range_deg * k / (n_inclination - 1)
            for k in range(int(n_inclination))
        ]
    poses = [ViewPose(a, i) for a in azimuths for i in inclinations]
    return Trajectory(poses, label="train")


def make_test_trajectory(n_views=360):
    """Full transversal rotation at zero inclination, ascending azimuth."""
    if int(n_views) != n_views or n_views < 1:
        raise ValueError("n_views must be a positive integer")
    poses = [ViewPose(360.0 * k / n_views, 0.0) for k in range(int(n_views))]
    return Trajectory(poses, label="test")


def _frame(pose):
    """Unit vectors (toward source, detector column axis, detector row-up axis)."""
    ca, sa = _cos_sin_deg(pose.azimuth_deg)
    ci, si = _cos_sin_deg(pose.inclination_deg)
    to_source = np.array([ci * ca, ci * sa, si])
    u_col = np.array([-sa, ca, 0.0])
    v_up = np.array([-si * ca, -si * sa, ci])
    return to_source, u_col, v_up


def source_position(geom, pose):
    if geom.beam_mode != "cone":
        raise UnsupportedModeError("source_position is only defined in cone mode")
    to_source, _, _ = _frame(pose)
    return geom.sad_mm * to_source


def detector_offsets(geom):
    """Pixel-center offsets (mm) along the column and row-up axes.

    Row 0 is the top of the image (+z at zero inclination); the principal
    point is the detector center.
    """
    cols = (np.arange(geom.det_cols) - (geom.det_cols - 1) / 2.0) * geom.det_spacing_mm
    rows = ((geom.det_rows - 1) / 2.0 - np.arange(geom.det_rows)) * geom.det_spacing_mm
    return rows, cols


def view_rays(geom, pose):
    """All rays of one view as (origins, directions), each (rows, cols, 3)."""
    to_source, u_col, v_up = _frame(pose)
    row_off, col_off = detector_offsets(geom)
    lateral = row_off[:, None, None] * v_up + col_off[None, :, None] * u_col
    if geom.beam_mode == "cone":
        src = geom.sad_mm * to_source
        d = lateral - geom.sdd_mm * to_source
        d /= np.sqrt((d * d).sum(axis=-1, keepdims=True))
        origins = np.broadcast_to(src, d.shape).copy()
        return origins, d
    origins = geom.sad_mm * to_source + lateral
    d = np.broadcast_to(-to_source, origins.shape).copy()
    return origins, d


def ray_for_pixel(geom, pose, row, col):
    if not (0 <= row < geom.det_rows and 0 <= col < geom.det_cols):
        raise ValueError(f"pixel ({row}, {col}) outside {geom.det_rows}x{geom.det_cols} detector")
    to_source, u_col, v_up = _frame(pose)
    row_off, col_off = detector_offsets(geom)
    lateral = row_off[row] * v_up + col_off[col] * u_col
    if geom.beam_mode == "cone":
        src = geom.sad_mm * to_source
        d = lateral - geom.sdd_mm * to_source
        d = d / np.sqrt((d * d).sum(axis=-1, keepdims=True))
        return Ray(tuple(src), tuple(d))
    return Ray(tuple(geom.sad_mm * to_source + lateral), tuple(-to_source))


RAO_LAO_CONVENTION = "angle_deg 0 = RAO 90; angle_deg 180 = LAO 90"
