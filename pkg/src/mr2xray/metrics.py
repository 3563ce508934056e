"""Masked MAE / PSNR, SSIM and per-angle evaluation reports.

MAE and PSNR only look at pixels where the label is nonzero, which keeps the
air background from flattering the scores. SSIM uses the full image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mr2xray.geometry import RAO_LAO_CONVENTION

PSNR_CAP_DB = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
METRIC_COLUMNS = ("subject_id", "azimuth_deg", "inclination_deg", "mae_percent", "ssim", "psnr_db", "mask_fraction")


class EmptyMaskError(ValueError):
    pass


def _mask(label):
    m = label != 0
    if not m.any():
        raise EmptyMaskError("label image has no nonzero pixels")
    return m


def _pair(generated, label):
    g = np.asarray(generated, dtype=np.float64)
    l = np.asarray(label, dtype=np.float64)
    if g.shape != l.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {l.shape}")
    return g, l


def masked_mae_percent(generated, label, basis="range"):
    """Mean |G - L| over nonzero label pixels, as a percentage.

    basis="range" divides by max(L) - min of L over the mask; basis="mean"
    divides by the mean label value over the mask.
    """
    g, l = _pair(generated, label)
    m = _mask(l)
    err = np.abs(g[m] - l[m]).mean()
    if basis == "range":
        denom = l.max() - l[m].min()
        if denom <= 0:
            denom = abs(l.max())
    elif basis == "mean":
        denom = abs(l[m].mean())
    else:
        raise ValueError(f"unknown MAE basis {basis!r}")
    return float(100.0 * err / denom)


def masked_psnr(generated, label):
    """10 log10(peak^2 / MSE) over the mask; peak is max(L) on the mask, capped at 99 dB."""
    g, l = _pair(generated, label)
    m = _mask(l)
    mse = np.mean((g[m] - l[m]) ** 2)
    peak = l[m].max()
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(a, g):
    """Separable 'valid' correlation with the 1D window g along both axes."""
    rows = sliding_window_view(a, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(generated, label, data_range=None):
    """Mean SSIM over all 11x11 Gaussian-weighted windows (sigma 1.5).

    data_range defaults to max(L) - min(L).
    """
    x, y = _pair(generated, label)
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {x.shape}")
    r = (y.max() - y.min()) if data_range is None else float(data_range)
    if r <= 0:
        r = 1.0
    c1 = (SSIM_K1 * r) ** 2
    c2 = (SSIM_K2 * r) ** 2
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricsRecord:
    subject_id: str
    azimuth_deg: float
    inclination_deg: float
    mae_percent: float
    ssim: float
    psnr_db: float
    mask_fraction: float


def evaluate_pair(generated, label, subject_id="", azimuth_deg=0.0, inclination_deg=0.0, basis="range"):
    g, l = _pair(generated, label)
    return MetricsRecord(
        subject_id, float(azimuth_deg), float(inclination_deg),
        masked_mae_percent(g, l, basis), ssim(g, l), masked_psnr(g, l), float((l != 0).mean()),
    )


class RunningStats:
    """Welford accumulation of mean and population std."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self._m2 += d * (x - self.mean)

    @property
    def std(self):
        return math.sqrt(self._m2 / self.n) if self.n else float("nan")


def summarize(records):
    """{metric: (mean, std)} over all records, std with ddof=0."""
    out = {}
    for key in ("mae_percent", "ssim", "psnr_db"):
        acc = RunningStats()
        for r in records:
            acc.push(getattr(r, key))
        out[key] = (acc.mean, acc.std)
    return out


def evaluate_set(predict, manifest, split="test", basis="range"):
    """Run ``predict`` (normalized MR array -> normalized X-ray array) on every
    view of ``split`` and score it in the label intensity domain.

    Returns (records sorted by subject then azimuth, summary).
    """
    from mr2xray.dataset import denormalize

    rows = [r for r in manifest.rows if r.split == split]
    if not rows:
        raise ValueError(f"no '{split}' views to evaluate")
    records = []
    for row in rows:
        sample = manifest.load_sample(row)
        stats = manifest.label_stats_for(row.subject_id)
        gen = denormalize(predict(sample.input), stats)
        lab = denormalize(sample.label, stats)
        lab = np.where(sample.mask, lab, 0.0)
        records.append(evaluate_pair(gen, lab, row.subject_id, row.azimuth_deg, row.inclination_deg, basis))
    records.sort(key=lambda r: (r.subject_id, r.azimuth_deg, r.inclination_deg))
    return records, summarize(records)


def _fmt(x):
    return repr(float(x))


def format_metrics_csv(records, summary=None, meta=None):
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(",".join(METRIC_COLUMNS))
    for r in records:
        lines.append(",".join([r.subject_id, _fmt(r.azimuth_deg), _fmt(r.inclination_deg),
                               _fmt(r.mae_percent), _fmt(r.ssim), _fmt(r.psnr_db), _fmt(r.mask_fraction)]))
    for key, (m, s) in (summary or {}).items():
        lines.append(f"# summary {key} mean={_fmt(m)} std={_fmt(s)}")
    return "\n".join(lines) + "\n"


def per_angle_report(records, meta=None):
    """Metric curves over azimuth, averaged across subjects at each angle.

    Returns (csv text, plot data dict of arrays). Opposing angles stay separate rows.
    """
    by_angle = {}
    for r in records:
        by_angle.setdefault(r.azimuth_deg, []).append(r)
    angles = sorted(by_angle)
    curves = {"angle_deg": np.array(angles)}
    for key in ("mae_percent", "ssim", "psnr_db"):
        curves[key] = np.array([np.mean([getattr(r, key) for r in by_angle[a]]) for a in angles])
    lines = [f"# angle convention: {RAO_LAO_CONVENTION}"]
    lines += [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append("angle_deg,mae_percent,ssim,psnr_db")
    for i, a in enumerate(angles):
        lines.append(",".join(_fmt(v) for v in (a, curves["mae_percent"][i], curves["ssim"][i], curves["psnr_db"][i])))
    return "\n".join(lines) + "\n", curves
