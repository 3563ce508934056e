"""Adversarial training loop, checkpointing and inference."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mr2xray import objective
from mr2xray.dataset import NormalizationStats, denormalize, normalize
from mr2xray.gradcore import AdamState, adam_step, backward, load_checkpoint, no_grad, save_checkpoint
from mr2xray.gradcore.checkpoint import CheckpointError
from mr2xray.gradcore.tensor import Tensor
from mr2xray.metrics import masked_mae_percent
from mr2xray.model.arch import (
    ArchConfig,
    DiscConfig,
    FeatureNetConfig,
    build_discriminator,
    build_feature_net,
    build_generator,
)

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("iteration", "epoch", "loss_d", "loss_g_gan", "loss_g_fm", "loss_total")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 300
    max_iterations: int | None = None
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 50


@dataclass
class TrainResult:
    generator: object
    discriminator: object
    featnet: object
    loss_log: list
    checkpoints: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.loss_log)


def _image_tensor(a):
    return Tensor(np.asarray(a, dtype=np.float32)[None, None])


def predict_array(generator, image):
    """Forward one normalized 2D image through the generator without recording a graph."""
    with no_grad():
        return generator(_image_tensor(image)).data[0, 0].copy()


def masked_mae_on(generator, samples, label_stats):
    """Mean masked MAE% of the generator over samples, in label intensity units."""
    vals = []
    for s in samples:
        stats = label_stats(s.subject_id) if callable(label_stats) else label_stats
        lab = np.where(s.mask, denormalize(s.label, stats), 0.0)
        gen = denormalize(predict_array(generator, s.input), stats)
        vals.append(masked_mae_percent(gen, lab))
    return float(np.mean(vals))


def _checkpoint_arrays(gen, disc):
    arrays = {f"gen/{k}": v for k, v in gen.params.state_dict().items()}
    arrays.update({f"disc/{k}": v for k, v in disc.params.state_dict().items()})
    return arrays


def write_checkpoint(path, gen, disc, label_stats=None, meta=None):
    info = {"arch": json.dumps(asdict(gen.config), sort_keys=True, separators=(",", ":"))}
    if label_stats is not None:
        info["label_mean"] = repr(float(label_stats.mean))
        info["label_std"] = repr(float(label_stats.std))
    info.update(meta or {})
    return save_checkpoint(path, _checkpoint_arrays(gen, disc), gen.config.arch_hash(), info)


def format_loss_log(rows, meta=None):
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(",".join(LOSS_LOG_COLUMNS))
    for r in rows:
        lines.append(",".join(
            str(r[c]) if c in ("iteration", "epoch") else repr(float(r[c])) for c in LOSS_LOG_COLUMNS
        ))
    return "\n".join(lines) + "\n"


def train(data, gen_config, loss_config=objective.LossConfig(), trainer=TrainerConfig(), seed=0,
          disc_config=DiscConfig(), feat_config=FeatureNetConfig(), out_dir=None,
          label_stats=None, meta=None, callback=None):
    """Alternate one discriminator and one generator Adam step per sample.

    ``data`` is a list of PairedSample or a DatasetManifest (its train split).
    Sample order is reshuffled every epoch from ``seed``. With ``out_dir`` the
    loss log and checkpoints (every ``checkpoint_every`` epochs and at the
    end) are written there.
    """
    samples = data.samples("train") if hasattr(data, "samples") else list(data)
    if not samples:
        raise ValueError("training split is empty")
    if label_stats is None and hasattr(data, "label_stats") and data.label_scope == "global":
        label_stats = data.label_stats["global"]

    gen = build_generator(gen_config, seed)
    disc = build_discriminator(seed + 1, disc_config)
    featnet = build_feature_net(feat_config)
    opt_g = AdamState(trainer.lr, trainer.beta1, trainer.beta2, trainer.eps)
    opt_d = AdamState(trainer.lr, trainer.beta1, trainer.beta2, trainer.eps)
    order_rng = np.random.default_rng(seed + 2)

    inputs = [_image_tensor(s.input) for s in samples]
    labels = [_image_tensor(s.label) for s in samples]
    wmaps = [objective.label_weight_map(s.label, loss_config) for s in samples]
    stage_weights = loss_config.fm_stage_weights

    out = Path(out_dir) if out_dir is not None else None
    total_iters = trainer.epochs * len(samples)
    if trainer.max_iterations is not None:
        total_iters = min(total_iters, trainer.max_iterations)
    result = TrainResult(gen, disc, featnet, [])
    it = 0
    epoch = 0
    while it < total_iters:
        for idx in order_rng.permutation(len(samples)):
            if it >= total_iters:
                break
            x, y, e = inputs[idx], labels[idx], wmaps[idx]
            fake = gen(x)

            loss_d = objective.discriminator_loss(disc, x, y, fake, e)
            backward(loss_d)
            adam_step(disc.params, opt_d)

            with disc.params.frozen():
                loss_gan = objective.generator_gan_loss(disc, x, fake, e)
                loss_fm = objective.feature_matching_loss(featnet, y, fake, e, stage_weights)
                loss_g = objective.total_loss(loss_gan, loss_fm)
                backward(loss_g)
            adam_step(gen.params, opt_g)

            row = {
                "iteration": it, "epoch": epoch, "loss_d": loss_d.item(),
                "loss_g_gan": loss_gan.item(), "loss_g_fm": loss_fm.item(), "loss_total": loss_g.item(),
            }
            result.loss_log.append(row)
            if not all(math.isfinite(row[k]) for k in LOSS_LOG_COLUMNS[2:]):
                if out is not None:
                    out.mkdir(parents=True, exist_ok=True)
                    (out / "diverged.txt").write_text(json.dumps(row, sort_keys=True) + "\n")
                raise TrainingDiverged(f"non-finite loss at iteration {it}", row)
            if callback is not None:
                callback(row, result)
            it += 1
        epoch += 1
        if out is not None and trainer.checkpoint_every and epoch % trainer.checkpoint_every == 0 and it < total_iters:
            result.checkpoints.append(
                write_checkpoint(out / f"checkpoint_epoch{epoch:04d}.ckpt", gen, disc, label_stats, meta)
            )
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.checkpoints.append(write_checkpoint(out / "checkpoint_final.ckpt", gen, disc, label_stats, meta))
        (out / "loss_log.csv").write_text(format_loss_log(result.loss_log, meta))
    log.info("trained %d iterations over %d epochs", it, epoch)
    return result


class Predictor:
    """Generator restored from a checkpoint; reentrant, holds no mutable state."""

    def __init__(self, generator, label_stats=None, meta=None):
        self.generator = generator
        self.label_stats = label_stats
        self.meta = meta or {}

    def __call__(self, image):
        return predict_array(self.generator, image)


def load_predictor(path, config=None):
    """Restore the generator; with ``config`` given, its hash must match the checkpoint."""
    expected = config.arch_hash() if config is not None else None
    arrays, arch_hash, meta = load_checkpoint(path, expected)
    stored = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in json.loads(meta["arch"]).items()})
    if stored.arch_hash() != arch_hash:
        raise CheckpointError("checkpoint architecture record does not match its hash")
    gen = build_generator(stored)
    gen.params.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    stats = None
    if "label_mean" in meta:
        stats = NormalizationStats(float(meta["label_mean"]), float(meta["label_std"]), "global")
    return Predictor(gen, stats, meta)


def infer(checkpoint, mr_image, mr_stats=None, denormalize_output=False, config=None):
    """Generate an X-ray projection from an MR projection.

    ``checkpoint`` is a path or a loaded Predictor. With ``mr_stats`` the raw
    MR image is normalized first; ``denormalize_output`` maps the result back
    to label units with the checkpoint's stored statistics.
    """
    pred = checkpoint if isinstance(checkpoint, Predictor) else load_predictor(checkpoint, config)
    img = getattr(mr_image, "data", mr_image)
    if mr_stats is not None:
        img = normalize(img, mr_stats)
    out = pred(img)
    if denormalize_output:
        if pred.label_stats is None:
            raise CheckpointError("checkpoint carries no label statistics")
        out = denormalize(out, pred.label_stats)
    return out
