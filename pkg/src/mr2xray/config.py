"""Run configuration: one YAML file drives every pipeline stage.

Keys can be overridden with dotted paths (``trainer.epochs=10``). The
config hash covers everything that influences artifact content, so the
output directory and thread count are excluded from it.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from mr2xray.model.arch import PRESETS

CONFIG_FORMAT = "RUNCFG1"
PIPELINE_FORMAT = "mr2xray-1"
_UNHASHED = ("output_dir", "threads")

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "threads": 1,
    "phantom": {
        "n_subjects": 13,
        "dims": [128, 128, 128],
        "spacing_mm": [1.5, 1.5, 1.5],
        "truncate_axial_fraction": 0.0,
        "truncated_subjects": None,
        "jitter": 0.05,
    },
    "geometry": {
        "sad_mm": 785.0,
        "sdd_mm": 1200.0,
        "det_rows": 256,
        "det_cols": 256,
        "det_spacing_mm": 1.2,
        "beam_mode": "cone",
    },
    "trajectory": {
        "train": {"n_azimuth": 30, "n_inclination": 15, "incl_range_deg": 20.0},
        "test": {"n_views": 360},
    },
    "projector": {"step_mm": None, "backend": "auto"},
    "dataset": {"test_subjects": ["subj11", "subj12"], "label_scope": "global"},
    "model": {"preset": "proposed"},
    "loss": {
        "edge_threshold": 0.4,
        "baseline_weight": 0.1,
        "edge_weighting": True,
        "binarize": False,
        "fm_stage_weights": [1.0, 1.0, 1.0, 1.0],
    },
    "trainer": {
        "epochs": 300,
        "max_iterations": None,
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "checkpoint_every": 50,
    },
    "eval": {"basis": "range"},
    "bench": {"repetitions": 100, "warmup": 10, "size": 256, "projector_views": 8},
}

# Desk-scale preset: 4 training phantoms with one 64x64 view each, one
# held-out subject scored over 36 azimuths, 200 iterations.
DEMO_OVERRIDES = {
    "output_dir": "runs/demo",
    "phantom": {"n_subjects": 5, "dims": [64, 64, 64], "spacing_mm": [3.0, 3.0, 3.0]},
    "geometry": {"det_rows": 64, "det_cols": 64, "det_spacing_mm": 4.8},
    "trajectory": {
        "train": {"n_azimuth": 1, "n_inclination": 1, "incl_range_deg": 0.0},
        "test": {"n_views": 36},
    },
    "dataset": {"test_subjects": ["subj04"]},
    "trainer": {"max_iterations": 200, "checkpoint_every": 0},
    "bench": {"size": 64},
}


class ConfigError(ValueError):
    pass


def _merge(base, extra, path=""):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' is a section, got {value!r}")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text):
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    value = yaml.safe_load(raw) if raw else None
    out = value
    for part in reversed(key.strip().split(".")):
        out = {part: out}
    return out


class RunConfig:
    """Validated, fully resolved run configuration."""

    def __init__(self, data):
        self.data = data
        self._validate()

    @classmethod
    def build(cls, base="default", path=None, overrides=()):
        data = DEFAULTS if base == "default" else _merge(DEFAULTS, DEMO_OVERRIDES)
        if path is not None:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            loaded.pop("config_format", None)
            data = _merge(data, loaded)
        for ov in overrides:
            data = _merge(data, parse_override(ov))
        return cls(data)

    def __getitem__(self, key):
        return self.data[key]

    def _validate(self):
        d = self.data
        if d["model"]["preset"] not in PRESETS:
            raise ConfigError(f"unknown model preset {d['model']['preset']!r}; choose from {sorted(PRESETS)}")
        if int(d["seed"]) != d["seed"] or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if int(d["threads"]) != d["threads"] or d["threads"] < 1:
            raise ConfigError("threads must be a positive integer")
        n = d["phantom"]["n_subjects"]
        ids = {f"subj{i:02d}" for i in range(n)}
        missing = set(d["dataset"]["test_subjects"]) - ids
        if missing:
            raise ConfigError(f"test subjects {sorted(missing)} are not in the {n}-subject cohort")
        if len(set(d["dataset"]["test_subjects"])) >= n:
            raise ConfigError("at least one subject must remain for training")
        if d["eval"]["basis"] not in ("range", "mean"):
            raise ConfigError("eval.basis must be 'range' or 'mean'")
        if d["projector"]["backend"] not in ("auto", "compiled", "python"):
            raise ConfigError("projector.backend must be auto, compiled or python")

    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def output_dir(self):
        return Path(self.data["output_dir"])

    def subjects(self):
        return [f"subj{i:02d}" for i in range(self.data["phantom"]["n_subjects"])]

    def split(self):
        test = list(self.data["dataset"]["test_subjects"])
        return {"train": [s for s in self.subjects() if s not in test], "test": test}

    def hashed_view(self):
        return {k: v for k, v in self.data.items() if k not in _UNHASHED}

    def config_hash(self):
        blob = json.dumps(self.hashed_view(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def meta(self):
        """Provenance fields stamped into every artifact."""
        return {"config_hash": self.config_hash(), "seed": self.seed, "format_version": PIPELINE_FORMAT}

    def to_yaml(self):
        """Serialized config without ``output_dir``, so copies in two run directories match."""
        body = {"config_format": CONFIG_FORMAT, **{k: v for k, v in self.data.items() if k != "output_dir"}}
        return yaml.safe_dump(body, sort_keys=True, default_flow_style=None)
