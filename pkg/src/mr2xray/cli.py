"""Command-line pipeline: phantom -> project -> prepare -> train -> infer -> eval, plus bench and demo.

Every stage reads one run config (``--config``), accepts dotted-path
overrides as trailing arguments, and writes under ``output_dir``::

    phantoms/      cohort.txt, <subject>_ct.volh/.vol, <subject>_mr.volh/.vol
    projections/   <subject>/<train|test>/<mr|xray>/manifest.txt + view files
    dataset/       dataset.txt, stats/
    train/         loss_log.csv, checkpoint_*.ckpt
    infer/         <subject>/ generated test-trajectory sets
    eval/          metrics.csv, per_angle.csv
    bench/         bench.txt

Exit codes: 0 success, 1 validation or contract failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from mr2xray import dataset, geometry, metrics, objective, phantom, projector
from mr2xray.config import ConfigError, RunConfig
from mr2xray.gradcore import CheckpointError
from mr2xray.model import arch
from mr2xray.model import training
from mr2xray.projector import io as pio

log = logging.getLogger("mr2xray")

STAGES = ("phantom", "project", "prepare", "train", "infer", "eval")


def _meta(cfg, **extra):
    m = cfg.meta()
    m.update(extra)
    return m


def _ensure_writable(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def _geometry(cfg):
    return geometry.ConeBeamGeometry(**cfg["geometry"])


def _trajectories(cfg):
    t = cfg["trajectory"]
    return (
        geometry.make_training_trajectory(**t["train"]),
        geometry.make_test_trajectory(**t["test"]),
    )


def _backend(cfg):
    b = cfg["projector"]["backend"]
    return None if b == "auto" else b


def _volume_path(out, sid, channel):
    return out / "phantoms" / f"{sid}_{channel}.volh"


def _set_dir(out, sid, part, channel):
    return out / "projections" / sid / part / channel


# stages ------------------------------------------------------------------

def cmd_phantom(cfg):
    out = _ensure_writable(cfg.output_dir / "phantoms")
    p = cfg["phantom"]
    base = phantom.HeadPhantomParams(
        seed=cfg.seed, dims=tuple(p["dims"]), spacing_mm=tuple(p["spacing_mm"]),
        truncate_axial_fraction=p["truncate_axial_fraction"], jitter=p["jitter"],
    )
    pairs = phantom.generate_cohort(p["n_subjects"], base, p["truncated_subjects"])
    for pair in pairs:
        for channel, vol in (("ct", pair.ct), ("mr", pair.mr)):
            pio.write_volume(vol, out / f"{pair.subject_id}_{channel}", _meta(cfg, subject_id=pair.subject_id))
    (out / "cohort.txt").write_text(phantom.format_cohort_manifest(pairs, _meta(cfg)))
    log.info("wrote %d phantom pairs to %s", len(pairs), out)
    return out


def cmd_project(cfg):
    out = cfg.output_dir
    geom = _geometry(cfg)
    train_traj, test_traj = _trajectories(cfg)
    test = set(cfg.split()["test"])
    step = cfg["projector"]["step_mm"]
    threads = int(cfg["threads"])
    n_views = 0
    for sid in cfg.subjects():
        vols = {
            "xray": pio.read_volume(_volume_path(out, sid, "ct")),
            "mr": pio.read_volume(_volume_path(out, sid, "mr")),
        }
        parts = [("train", train_traj)] + ([("test", test_traj)] if sid in test else [])
        for part, traj in parts:
            for channel, vol in vols.items():
                pset = projector.project_trajectory(
                    vol, geom, traj, step, _backend(cfg), threads, subject_id=sid, channel=channel
                )
                pio.write_projection_set(pset, _set_dir(out, sid, part, channel), _meta(cfg))
                n_views += len(pset)
    log.info("wrote %d views under %s", n_views, out / "projections")
    return out / "projections"


def cmd_prepare(cfg):
    out = cfg.output_dir
    split = cfg.split()
    mr_sets, xr_sets, dirs = {}, {}, {}
    for part, sids in split.items():
        for sid in sids:
            for channel, store in (("mr", mr_sets), ("xray", xr_sets)):
                d = _set_dir(out, sid, part, channel)
                store[sid] = pio.read_projection_set(d)
                dirs[(sid, channel)] = d
    manifest = dataset.build_dataset(mr_sets, xr_sets, split, cfg["dataset"]["label_scope"], dirs)
    path = dataset.write_dataset(manifest, _ensure_writable(out / "dataset"), _meta(cfg))
    log.info("dataset with %d rows at %s", len(manifest.rows), path)
    return path


def _loss_config(cfg):
    c = dict(cfg["loss"])
    c["fm_stage_weights"] = tuple(c["fm_stage_weights"])
    return objective.LossConfig(**c)


def _arch_config(cfg):
    return arch.get_preset(cfg["model"]["preset"])


def cmd_train(cfg):
    manifest = dataset.read_dataset(cfg.output_dir / "dataset")
    out = _ensure_writable(cfg.output_dir / "train")
    result = training.train(
        manifest, _arch_config(cfg), _loss_config(cfg), training.TrainerConfig(**cfg["trainer"]),
        seed=cfg.seed, out_dir=out, meta=_meta(cfg, threads=cfg["threads"]),
    )
    log.info("trained %d iterations; final checkpoint %s", result.iterations, result.checkpoints[-1])
    return out / "checkpoint_final.ckpt"


def cmd_infer(cfg, checkpoint=None):
    out = cfg.output_dir
    manifest = dataset.read_dataset(out / "dataset")
    pred = training.load_predictor(checkpoint or out / "train" / "checkpoint_final.ckpt", _arch_config(cfg))
    if pred.label_stats is None:
        raise CheckpointError("checkpoint carries no label statistics")
    for sid in cfg.split()["test"]:
        mr_set = pio.read_projection_set(_set_dir(out, sid, "test", "mr"))
        stats = manifest.mr_stats[sid]
        images = [
            projector.ProjectionImage(training.infer(pred, im, stats, denormalize_output=True), im.pose, im.geometry_id)
            for im in mr_set.images
        ]
        gen = projector.ProjectionSet(mr_set.geometry, mr_set.trajectory, images, sid, "xray")
        pio.write_projection_set(gen, _ensure_writable(out / "infer" / sid), _meta(cfg, source="generated"))
    return out / "infer"


def evaluate_generated(cfg, basis=None):
    """Score the generated test sets in ``infer/`` against the raw X-ray labels."""
    out = cfg.output_dir
    basis = basis or cfg["eval"]["basis"]
    records = []
    for sid in cfg.split()["test"]:
        gen = pio.read_projection_set(out / "infer" / sid)
        lab = pio.read_projection_set(_set_dir(out, sid, "test", "xray"))
        if len(gen) != len(lab):
            raise ValueError(f"{sid}: {len(gen)} generated views for {len(lab)} labels")
        for g, l in zip(gen.images, lab.images):
            records.append(metrics.evaluate_pair(g.data, l.data, sid, l.pose.azimuth_deg, l.pose.inclination_deg, basis))
    records.sort(key=lambda r: (r.subject_id, r.azimuth_deg, r.inclination_deg))
    return records, metrics.summarize(records)


def cmd_eval(cfg):
    records, summary = evaluate_generated(cfg)
    out = _ensure_writable(cfg.output_dir / "eval")
    meta = _meta(cfg, mae_basis=cfg["eval"]["basis"])
    (out / "metrics.csv").write_text(metrics.format_metrics_csv(records, summary, meta))
    csv, _ = metrics.per_angle_report(records, meta)
    (out / "per_angle.csv").write_text(csv)
    for key, (m, s) in summary.items():
        log.info("%s: %.4f +/- %.4f", key, m, s)
    return summary


def hardware_note():
    return (f"{platform.machine() or 'unknown-arch'} {platform.processor() or ''}".strip()
            + f", {os.cpu_count()} logical CPUs, {platform.system()} {platform.release()}, "
            f"python {platform.python_version()}, numpy {np.__version__}")


def run_bench(cfg):
    """Throughput figures as a dict; numbers depend on the machine."""
    b = cfg["bench"]
    size = int(b["size"])
    gen = arch.build_generator(_arch_config(cfg), cfg.seed)
    x = np.random.default_rng(cfg.seed).standard_normal((size, size)).astype(np.float32)
    for _ in range(int(b["warmup"])):
        training.predict_array(gen, x)
    t0 = time.perf_counter()
    for _ in range(int(b["repetitions"])):
        training.predict_array(gen, x)
    fps = int(b["repetitions"]) / (time.perf_counter() - t0)

    geom = replace(_geometry(cfg), det_rows=size, det_cols=size)
    vol = phantom.generate_analytic_phantom(
        "ellipsoid", (10.0, 0.0, 5.0), (50.0, 40.0, 60.0), 1.0, (64, 64, 64), (3.0, 3.0, 3.0)
    )
    traj = geometry.make_test_trajectory(int(b["projector_views"]))
    vps = {}
    for backend in projector.available_backends():
        t0 = time.perf_counter()
        projector.project_trajectory(vol, geom, traj, backend=backend, threads=int(cfg["threads"]))
        vps[backend] = len(traj) / (time.perf_counter() - t0)
    return {
        "fps_infer": fps,
        "views_per_s_projector": vps[projector.default_backend()],
        "views_per_s_by_backend": vps,
        "image_size": size,
        "repetitions": int(b["repetitions"]),
        "warmup": int(b["warmup"]),
        "preset": cfg["model"]["preset"],
        "threads": int(cfg["threads"]),
        "hardware": hardware_note(),
    }


def format_bench(report, meta):
    lines = [f"# {k}={v}" for k, v in meta.items()]
    for key, value in report.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                lines.append(f"{key}.{sub}={v:.4f}")
        elif isinstance(value, float):
            lines.append(f"{key}={value:.4f}")
        else:
            lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def cmd_bench(cfg):
    report = run_bench(cfg)
    out = _ensure_writable(cfg.output_dir / "bench")
    text = format_bench(report, _meta(cfg))
    (out / "bench.txt").write_text(text)
    sys.stdout.write(text)
    return report


def cmd_demo(cfg):
    for stage in STAGES:
        log.info("stage %s", stage)
        COMMANDS[stage](cfg)
    return cfg.output_dir


COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "demo": cmd_demo,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="mr2xray", description="MR-to-X-ray projection synthesis pipeline.")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML run config (defaults apply to missing keys)")
        sp.add_argument("--threads", type=int, help="worker cap, recorded in run metadata")
        sp.add_argument("--seed", type=int, help="global seed override")
        sp.add_argument("--output-dir", type=Path, help="output directory override")
        sp.add_argument("overrides", nargs="*", metavar="key.path=value")
    return ap


def load_config(args):
    overrides = list(args.overrides)
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(f"output_dir={args.output_dir}")
    base = "demo" if args.command == "demo" else "default"
    return RunConfig.build(base, args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = _ensure_writable(cfg.output_dir)
        (out / "run_config.yaml").write_text(cfg.to_yaml())
        COMMANDS[args.command](cfg)
    except (ConfigError, CheckpointError, ValueError, KeyError, training.TrainingDiverged) as exc:
        print(f"mr2xray {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"mr2xray {args.command}: I/O error: {exc.strerror or exc}{where}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
