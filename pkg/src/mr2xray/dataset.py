"""Paired MR / X-ray projection samples, normalization and train/test splits.

MR inputs are standardized per subject. X-ray labels use statistics pooled
over the training subjects only (``label_scope="global"``), or each
subject's own statistics (``label_scope="per_subject"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mr2xray.geometry import ViewPose
from mr2xray.projector import io as pio

DATASET_FORMAT = "DSET1"
COLUMNS = ("subject_id", "pose_index", "azimuth_deg", "inclination_deg", "input_path", "label_path", "split")


class DegenerateDataError(ValueError):
    pass


class PairingError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float
    scope: str = "per_subject"

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateDataError("normalization std must be positive")
        if self.scope not in ("per_subject", "global"):
            raise ValueError(f"unknown stats scope {self.scope!r}")

    def to_text(self):
        return f"mean={self.mean!r}\nstd={self.std!r}\nscope={self.scope}\n"

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line and not line.startswith("#"))
        return cls(float(kv["mean"]), float(kv["std"]), kv.get("scope", "per_subject"))


def _as_arrays(images):
    out = []
    for im in images:
        out.append(np.asarray(getattr(im, "data", im), dtype=np.float64))
    return out


def compute_stats(images, scope="per_subject"):
    """Mean and population standard deviation over every pixel of the collection."""
    arrays = _as_arrays(images)
    if not arrays:
        raise DegenerateDataError("cannot compute statistics of an empty collection")
    n = sum(a.size for a in arrays)
    mean = sum(float(a.sum()) for a in arrays) / n
    var = sum(float(((a - mean) ** 2).sum()) for a in arrays) / n
    std = var ** 0.5
    if not std > 0:
        raise DegenerateDataError("collection is constant; standard deviation is zero")
    return NormalizationStats(mean, std, scope)


def normalize(image, stats):
    a = np.asarray(getattr(image, "data", image))
    return ((a - stats.mean) / stats.std).astype(np.float32)


def denormalize(image, stats):
    a = np.asarray(getattr(image, "data", image), dtype=np.float64)
    return (a * stats.std + stats.mean).astype(np.float32)


@dataclass
class PairedSample:
    input: np.ndarray
    label: np.ndarray
    subject_id: str
    pose: ViewPose
    pose_index: int = 0
    mask: np.ndarray | None = None  # label pixels that were nonzero before normalization

    def __post_init__(self):
        if self.input.shape != self.label.shape:
            raise PairingError("input and label must share dimensions")
        if self.mask is None:
            self.mask = np.ones(self.label.shape, dtype=bool)


@dataclass
class DatasetRow:
    subject_id: str
    pose_index: int
    azimuth_deg: float
    inclination_deg: float
    input_path: str
    label_path: str
    split: str


@dataclass
class DatasetManifest:
    rows: list
    mr_stats: dict
    label_stats: dict
    label_scope: str = "global"
    root: Path | None = None
    shape: tuple = ()
    _sets: dict = field(default_factory=dict, repr=False)

    def subjects(self, split=None):
        seen = []
        for r in self.rows:
            if (split is None or r.split == split) and r.subject_id not in seen:
                seen.append(r.subject_id)
        return seen

    def label_stats_for(self, subject_id):
        if self.label_scope == "global":
            return self.label_stats["global"]
        return self.label_stats[subject_id]

    def _load(self, subject_id, channel, index, path):
        cached = self._sets.get((subject_id, channel))
        if cached is not None:
            return cached.images[index].data
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        raw = np.fromfile(p, dtype="<f4")
        return raw.reshape(self.shape)

    def load_sample(self, row):
        mr = self._load(row.subject_id, "mr", row.pose_index, row.input_path)
        xr = self._load(row.subject_id, "xray", row.pose_index, row.label_path)
        return PairedSample(
            normalize(mr, self.mr_stats[row.subject_id]),
            normalize(xr, self.label_stats_for(row.subject_id)),
            row.subject_id,
            ViewPose(row.azimuth_deg, row.inclination_deg),
            row.pose_index,
            xr != 0,
        )

    def samples(self, split="train"):
        return [self.load_sample(r) for r in self.rows if r.split == split]


def _check_split(split, subjects):
    train = list(split.get("train", []))
    test = list(split.get("test", []))
    overlap = set(train) & set(test)
    if overlap:
        raise SplitError(f"subjects in both train and test: {sorted(overlap)}")
    unknown = (set(train) | set(test)) - set(subjects)
    if unknown:
        raise SplitError(f"split names unknown subjects: {sorted(unknown)}")
    if not train and not test:
        raise SplitError("split is empty")
    return train, test


def build_dataset(mr_sets, xray_sets, split, label_scope="global", set_dirs=None):
    """Pair MR and X-ray views by (subject, pose index) and fix normalization.

    ``mr_sets``/``xray_sets`` map subject id to ProjectionSet. ``set_dirs``
    optionally maps (subject id, channel) to the directory the set was
    written to, so the manifest can reference view files.
    """
    if set(mr_sets) != set(xray_sets):
        raise PairingError("MR and X-ray sets cover different subjects")
    if label_scope not in ("global", "per_subject"):
        raise ValueError(f"label_scope must be 'global' or 'per_subject', got {label_scope!r}")
    train, test = _check_split(split, list(mr_sets))

    rows, mr_stats, label_stats, shape = [], {}, {}, None
    for part, subjects in (("train", train), ("test", test)):
        for sid in subjects:
            mr, xr = mr_sets[sid], xray_sets[sid]
            if len(mr) != len(xr) or any(
                (a.azimuth_deg, a.inclination_deg) != (b.azimuth_deg, b.inclination_deg)
                for a, b in zip(mr.trajectory, xr.trajectory)
            ):
                raise PairingError(f"subject {sid}: MR and X-ray trajectories differ")
            if mr.images[0].data.shape != xr.images[0].data.shape:
                raise PairingError(f"subject {sid}: MR and X-ray image sizes differ")
            if shape is None:
                shape = mr.images[0].data.shape
            elif shape != mr.images[0].data.shape:
                raise PairingError("all subjects must share the detector size")
            mr_stats[sid] = compute_stats(mr.images, "per_subject")
            if label_scope == "per_subject":
                label_stats[sid] = compute_stats(xr.images, "per_subject")
            for i, pose in enumerate(mr.trajectory):
                if set_dirs is not None:
                    in_path = str(Path(set_dirs[(sid, "mr")]) / pio.view_filename(i))
                    lab_path = str(Path(set_dirs[(sid, "xray")]) / pio.view_filename(i))
                else:
                    in_path = lab_path = ""
                rows.append(DatasetRow(sid, i, pose.azimuth_deg, pose.inclination_deg, in_path, lab_path, part))
    if label_scope == "global":
        if not train:
            raise SplitError("global label statistics need at least one training subject")
        label_stats["global"] = compute_stats(
            [im for sid in train for im in xray_sets[sid].images], "global"
        )
    manifest = DatasetManifest(rows, mr_stats, label_stats, label_scope, shape=shape)
    for sid in mr_sets:
        if sid in train or sid in test:
            manifest._sets[(sid, "mr")] = mr_sets[sid]
            manifest._sets[(sid, "xray")] = xray_sets[sid]
    return manifest


def write_dataset(manifest, directory, meta=None):
    """Write ``dataset.txt`` plus ``stats/<subject>.txt`` and ``stats/label_global.txt``."""
    d = Path(directory)
    (d / "stats").mkdir(parents=True, exist_ok=True)
    header = [f"# format={DATASET_FORMAT}", f"# label_scope={manifest.label_scope}",
              f"# shape={manifest.shape[0]},{manifest.shape[1]}"]
    header += [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines = header + [",".join(COLUMNS)]
    for r in manifest.rows:
        lines.append(
            f"{r.subject_id},{r.pose_index},{r.azimuth_deg!r},{r.inclination_deg!r},"
            f"{_rel(r.input_path, d)},{_rel(r.label_path, d)},{r.split}"
        )
    (d / "dataset.txt").write_text("\n".join(lines) + "\n")
    for sid, st in manifest.mr_stats.items():
        (d / "stats" / f"{sid}.txt").write_text(st.to_text())
    for key, st in manifest.label_stats.items():
        name = "label_global.txt" if key == "global" else f"label_{key}.txt"
        (d / "stats" / name).write_text(st.to_text())
    return d / "dataset.txt"


def _rel(path, base):
    if not path:
        return path
    try:
        return str(Path(path).resolve().relative_to(base.resolve()))
    except ValueError:
        import os

        return os.path.relpath(Path(path).resolve(), base.resolve())


def read_dataset(directory):
    d = Path(directory)
    rows, meta = [], {}
    for line in (d / "dataset.txt").read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
            continue
        if not line or line.startswith("subject_id"):
            continue
        sid, idx, az, inc, ip, lp, split = line.split(",")
        rows.append(DatasetRow(sid, int(idx), float(az), float(inc), ip, lp, split))
    scope = meta.get("label_scope", "global")
    shape = tuple(int(v) for v in meta["shape"].split(","))
    subjects = {r.subject_id for r in rows}
    mr_stats = {sid: NormalizationStats.from_text((d / "stats" / f"{sid}.txt").read_text()) for sid in subjects}
    if scope == "global":
        label_stats = {"global": NormalizationStats.from_text((d / "stats" / "label_global.txt").read_text())}
    else:
        label_stats = {sid: NormalizationStats.from_text((d / "stats" / f"label_{sid}.txt").read_text())
                       for sid in subjects}
    return DatasetManifest(rows, mr_stats, label_stats, scope, root=d, shape=shape)
