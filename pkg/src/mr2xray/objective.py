"""Edge-weighted adversarial and feature-matching objective.

The label image's Sobel gradient magnitude, normalized to [0, 1] and
thresholded, becomes a per-pixel weight map. Every loss term multiplies its
own per-position values by that map, resampled bilinearly to the term's
native grid (discriminator patch logits, feature-net stages).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mr2xray.gradcore import ops
from mr2xray.gradcore.ops import ShapeError, bilinear_resize
from mr2xray.gradcore.tensor import Tensor, no_grad

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True)
class LossConfig:
    edge_threshold: float = 0.4
    baseline_weight: float = 0.1
    edge_weighting: bool = True
    binarize: bool = False
    fm_stage_weights: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.edge_threshold <= 1.0:
            raise ValueError("edge_threshold must lie in [0, 1]")
        if self.baseline_weight < 0:
            raise ValueError("baseline_weight must be non-negative")


@dataclass
class WeightMap:
    data: np.ndarray
    threshold: float = 0.4
    baseline_weight: float = 0.1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if not (np.isfinite(self.data).all() and (self.data >= 0).all()):
            raise ValueError("weight map values must be finite and non-negative")

    @property
    def shape(self):
        return self.data.shape

    def as_tensor(self):
        return Tensor(self.data[None, None])


def sobel_raw(image):
    """Unnormalized Sobel magnitude with replicate-padded borders."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim != 2 or min(a.shape) < 3:
        raise ValueError(f"Sobel needs a 2D image of at least 3x3, got shape {a.shape}")
    gx = ndimage.correlate(a, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(a, SOBEL_Y, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def sobel_gradient_map(image):
    """Sobel gradient magnitude scaled by its maximum into [0, 1]."""
    mag = sobel_raw(image)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def make_weight_map(grad_map, config=LossConfig()):
    g = np.asarray(grad_map, dtype=np.float64)
    if not config.edge_weighting:
        return WeightMap(np.ones_like(g), config.edge_threshold, 1.0)
    edge = g >= config.edge_threshold
    above = np.ones_like(g) if config.binarize else g
    return WeightMap(np.where(edge, above, config.baseline_weight), config.edge_threshold,
                     config.baseline_weight)


def label_weight_map(label, config=LossConfig()):
    """Weight map straight from a label image (the only input it may depend on)."""
    if not config.edge_weighting:
        return WeightMap(np.ones(np.shape(label)), config.edge_threshold, 1.0)
    return make_weight_map(sobel_gradient_map(label), config)


def resize_weight_map(wmap, target_h, target_w):
    data = wmap.data if isinstance(wmap, WeightMap) else np.asarray(wmap, dtype=np.float32)
    if data.shape == (target_h, target_w):
        out = data.copy()
    else:
        out = np.maximum(bilinear_resize(data, target_h, target_w), 0.0)
    thr = wmap.threshold if isinstance(wmap, WeightMap) else 0.0
    base = wmap.baseline_weight if isinstance(wmap, WeightMap) else 0.0
    return WeightMap(out, thr, base)


def _weighted_mean(values, wmap):
    """Mean of ``values`` (1, C, h, w) after multiplying by the map resized to (h, w)."""
    if wmap is None:
        return ops.mean(values)
    h, w = values.shape[-2:]
    e = resize_weight_map(wmap, h, w).data.astype(values.dtype)
    return ops.mean(ops.mul(values, Tensor(e[None, None])))


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def discriminator_loss(disc, inp, label, generated, wmap=None):
    """Patch-averaged BCE pushing D(I, L) to 1 and D(I, G) to 0.

    ``generated`` is detached here so no gradient reaches the generator.
    """
    _check_pair(label, generated, "discriminator_loss")
    real = disc(inp, label)
    fake = disc(inp, generated.detach())
    return ops.add(
        _weighted_mean(ops.bce_with_logits(real, 1.0), wmap),
        _weighted_mean(ops.bce_with_logits(fake, 0.0), wmap),
    )


def generator_gan_loss(disc, inp, generated, wmap=None):
    """Non-saturating generator term: BCE of D(I, G) against the real label."""
    _check_pair(inp, generated, "generator_gan_loss")
    return _weighted_mean(ops.bce_with_logits(disc(inp, generated), 1.0), wmap)


def feature_matching_loss(featnet, label, generated, wmap=None, stage_weights=None):
    _check_pair(label, generated, "feature_matching_loss")
    with no_grad():
        target = featnet(label)
    feats = featnet(generated)
    if stage_weights is None:
        stage_weights = (1.0,) * len(feats)
    if len(stage_weights) < len(feats):
        raise ValueError(f"{len(feats)} feature stages but {len(stage_weights)} stage weights")
    total = None
    for weight, f_gen, f_lab in zip(stage_weights, feats, target):
        term = ops.mul(_weighted_mean(ops.abs_diff(f_gen, f_lab), wmap), float(weight))
        total = term if total is None else ops.add(total, term)
    return total


def total_loss(gan_term, fm_term):
    """Generator objective; each term already carries its resized weight map."""
    return ops.add(gan_term, fm_term)


def edge_fraction(wmap, threshold=0.4):
    """Share of pixels whose weight reaches the edge threshold."""
    return float((np.asarray(wmap.data if isinstance(wmap, WeightMap) else wmap) >= threshold).mean())
