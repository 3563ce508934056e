"""Synthetic head phantoms with voxel-aligned CT attenuation and MR intensity.

The material table encodes the MR ambiguity that makes the translation
ill-posed: bone and air are both MR-dark but differ strongly in attenuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from mr2xray.projector import Volume


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    mu_per_mm: float
    mr_intensity: float

    def __post_init__(self):
        if self.mu_per_mm < 0 or self.mr_intensity < 0:
            raise ValueError(f"material {self.name!r} needs non-negative mu and MR intensity")


DEFAULT_MATERIALS = {
    "air": MaterialSpec("air", 0.0, 0.0),
    "soft_tissue": MaterialSpec("soft_tissue", 0.019, 0.6),
    "bone": MaterialSpec("bone", 0.048, 0.02),
    "vessel": MaterialSpec("vessel", 0.021, 1.0),
}


@dataclass(frozen=True)
class HeadPhantomParams:
    seed: int = 0
    dims: tuple = (128, 128, 128)
    spacing_mm: tuple = (1.5, 1.5, 1.5)
    skull_thickness_mm: float = 7.0
    scalp_thickness_mm: float = 5.0
    n_sinus_cavities: int = 3
    n_vessels: int = 6
    jitter: float = 0.05
    truncate_axial_fraction: float = 0.0
    mr_texture: float = 0.08
    materials: dict = field(default_factory=lambda: dict(DEFAULT_MATERIALS))

    def __post_init__(self):
        if not self.skull_thickness_mm > 0:
            raise ValueError("skull_thickness_mm must be positive")
        if not 0.0 <= self.truncate_axial_fraction < 1.0:
            raise ValueError("truncate_axial_fraction must lie in [0, 1)")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class PhantomPair:
    subject_id: str
    seed: int
    truncation: float
    ct: Volume
    mr: Volume

    def __iter__(self):
        return iter((self.ct, self.mr))


def _grid(dims, spacing):
    vol = Volume(np.zeros(tuple(reversed(dims)), dtype=np.float32), spacing)
    x, y, z = vol.voxel_centers()
    zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")
    return vol, xx, yy, zz


def generate_analytic_phantom(kind, center_mm, radii_mm, value=1.0,
                              dims=(64, 64, 64), spacing_mm=(1.0, 1.0, 1.0), supersample=1):
    """Sphere or axis-aligned ellipsoid.

    With ``supersample=1`` a voxel is ``value`` iff its center is inside.
    Larger values fill each voxel with ``value`` times the inside fraction of
    supersample**3 evenly spaced sub-points (partial-volume voxelization).
    """
    radii = np.broadcast_to(np.asarray(radii_mm, dtype=np.float64), (3,))
    if kind == "sphere" and np.ptp(radii) != 0:
        raise ValueError("a sphere takes a single radius")
    if kind not in ("sphere", "ellipsoid"):
        raise ValueError(f"unknown analytic phantom kind {kind!r}")
    if not (radii > 0).all():
        raise ValueError("radii must be positive")
    if int(supersample) != supersample or supersample < 1:
        raise ValueError("supersample must be a positive integer")
    vol, xx, yy, zz = _grid(dims, spacing_mm)
    cx, cy, cz = center_mm
    sx, sy, sz = vol.spacing_mm
    k = int(supersample)
    offs = (np.arange(k) + 0.5) / k - 0.5
    frac = np.zeros(vol.data.shape)
    for ox in offs:
        for oy in offs:
            for oz in offs:
                q = (((xx + ox * sx - cx) / radii[0]) ** 2 + ((yy + oy * sy - cy) / radii[1]) ** 2
                     + ((zz + oz * sz - cz) / radii[2]) ** 2)
                frac += q <= 1.0
    vol.data[...] = value * frac / k ** 3
    return vol


def _segment_distance(px, py, pz, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1] + (pz - a[2]) * ab[2]) / max(denom, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.sqrt((px - a[0] - t * ab[0]) ** 2 + (py - a[1] - t * ab[1]) ** 2 + (pz - a[2] - t * ab[2]) ** 2)


def generate_head_phantom(params):
    """Return a registered (ct, mr) volume pair for one synthetic subject.

    Layers from outside in: scalp (soft tissue), skull shell, brain (soft
    tissue). Sinus-like air cavities sit in the skull; MR-bright vessel tubes
    run through the brain. All shape parameters are drawn from ``params.seed``.
    """
    if min(params.dims) < 16:
        raise ValueError(f"grid {params.dims} is too small for a head phantom (min 16 voxels per axis)")
    rng = np.random.default_rng(params.seed)
    mats = params.materials
    j = params.jitter

    ct, xx, yy, zz = _grid(params.dims, params.spacing_mm)
    half_fov = np.array([(n - 1) * s / 2.0 for n, s in zip(params.dims, params.spacing_mm)])
    semi = half_fov * np.array([0.74, 0.88, 0.82]) * (1.0 + j * rng.uniform(-1, 1, 3))
    center = half_fov * 0.1 * j * rng.uniform(-1, 1, 3)
    angle = math.radians(30.0 * j * rng.uniform(-1, 1))
    ca, sa = math.cos(angle), math.sin(angle)

    # head-local coordinates (rotated about z)
    dx, dy, dz = xx - center[0], yy - center[1], zz - center[2]
    lx = ca * dx + sa * dy
    ly = -sa * dx + ca * dy
    lz = dz

    def inside(axes):
        return (lx / axes[0]) ** 2 + (ly / axes[1]) ** 2 + (lz / axes[2]) ** 2 <= 1.0

    skull_outer = semi - params.scalp_thickness_mm
    brain_axes = skull_outer - params.skull_thickness_mm
    if (brain_axes <= 0).any():
        raise ValueError("scalp and skull thicknesses exceed the head size")
    head = inside(semi)
    skull = inside(skull_outer) & ~inside(brain_axes)
    brain = inside(brain_axes)

    labels = np.zeros(ct.data.shape, dtype=np.uint8)  # 0 air, 1 soft, 2 bone, 3 vessel
    labels[head] = 1
    labels[skull] = 2

    mid_axes = skull_outer - params.skull_thickness_mm / 2.0
    for _ in range(params.n_sinus_cavities):
        # anterior, lower half of the skull
        u = np.array([rng.uniform(-0.5, 0.5), rng.uniform(0.6, 1.0), rng.uniform(-0.6, 0.1)])
        u /= np.linalg.norm(u)
        p = u / np.sqrt(np.sum((u / mid_axes) ** 2))
        r = params.skull_thickness_mm * rng.uniform(0.8, 1.5)
        cavity = (lx - p[0]) ** 2 + (ly - p[1]) ** 2 + (lz - p[2]) ** 2 <= r * r
        labels[cavity & skull] = 0

    vox = min(params.spacing_mm)
    for _ in range(params.n_vessels):
        pts = []
        while len(pts) < 4:
            cand = rng.uniform(-1, 1, 3)
            if np.sum(cand ** 2) <= 1.0:
                pts.append(cand * brain_axes * 0.75)
        radius = vox * rng.uniform(1.0, 2.0)
        tube = np.zeros(labels.shape, dtype=bool)
        for a, b in zip(pts[:-1], pts[1:]):
            tube |= _segment_distance(lx, ly, lz, a, b) <= radius
        labels[tube & brain] = 3

    mu = np.zeros(labels.shape, dtype=np.float64)
    mr = np.zeros(labels.shape, dtype=np.float64)
    for code, name in ((1, "soft_tissue"), (2, "bone"), (3, "vessel")):
        m = labels == code
        mu[m] = mats[name].mu_per_mm
        mr[m] = mats[name].mr_intensity

    if params.mr_texture > 0:
        noise = ndimage.gaussian_filter(rng.standard_normal(labels.shape), sigma=3.0)
        noise /= noise.std() or 1.0
        soft = labels == 1
        mr[soft] *= np.clip(1.0 + params.mr_texture * noise[soft], 0.0, None)
    # per-subject MR scaling stands in for protocol differences
    mr *= 1.0 + 2.0 * j * rng.uniform(-1, 1)

    n_cut = int(params.truncate_axial_fraction * labels.shape[0])
    if n_cut:
        mu[-n_cut:] = 0.0
        mr[-n_cut:] = 0.0

    ct.data[...] = mu
    mr_vol = Volume(mr.astype(np.float32), ct.spacing_mm, ct.origin_mm)
    return ct, mr_vol


def generate_cohort(n_subjects, base, truncated_subjects=None):
    """Seeds base.seed + index. Truncation applies to ``truncated_subjects`` (all if None)."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be at least 1")
    out = []
    for i in range(n_subjects):
        trunc = base.truncate_axial_fraction
        if truncated_subjects is not None and i not in set(truncated_subjects):
            trunc = 0.0
        params = replace(base, seed=base.seed + i, truncate_axial_fraction=trunc)
        ct, mr = generate_head_phantom(params)
        out.append(PhantomPair(f"subj{i:02d}", params.seed, trunc, ct, mr))
    return out


def format_cohort_manifest(pairs, meta=None):
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append("subject_id,seed,truncation")
    lines += [f"{p.subject_id},{p.seed},{p.truncation!r}" for p in pairs]
    return "\n".join(lines) + "\n"


def parse_cohort_manifest(text):
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("subject_id"):
            continue
        sid, seed, trunc = line.split(",")
        rows.append((sid, int(seed), float(trunc)))
    return rows
