"""Generator presets, patch discriminator and the frozen feature network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace

from mr2xray.gradcore import ops
from mr2xray.gradcore.ops import ShapeError
from mr2xray.gradcore.optim import ParamStore


@dataclass(frozen=True)
class ArchConfig:
    """Encoder-decoder generator layout.

    Level 0 is full resolution; each further level halves it. ``resblocks[l]``
    residual blocks run at level ``l``: on the decoder side for upper levels,
    at the bottleneck for the lowest one.
    """

    levels: int = 3
    channels: tuple = (32, 112, 96)
    resblocks: tuple = (4, 10, 0)
    stem_kernel: int = 7
    sample_kernel: int = 4
    res_kernel: int = 3
    head_kernel: int = 7
    final_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "resblocks", tuple(int(r) for r in self.resblocks))
        if self.levels < 2:
            raise ValueError("a generator needs at least 2 levels")
        if len(self.channels) != self.levels or len(self.resblocks) != self.levels:
            raise ValueError("channels and resblocks need one entry per level")
        if min(self.channels) < 1 or min(self.resblocks) < 0:
            raise ValueError("channel counts must be positive and block counts non-negative")
        if self.final_activation not in ("tanh", "linear"):
            raise ValueError("final_activation must be 'tanh' or 'linear'")
        for k in (self.stem_kernel, self.res_kernel, self.head_kernel):
            if k % 2 == 0:
                raise ValueError("stem, residual and head kernels must be odd")
        if self.sample_kernel != 4:
            # stride-2 resampling with padding 1 halves/doubles only for k = 4
            raise ValueError("sample_kernel must be 4")

    def arch_hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# Reference keeps every residual block at the bottleneck; proposed moves them
# to the two finest levels, with narrower blocks than the bottleneck width.
PRESETS = {
    "reference": ArchConfig(channels=(32, 64, 128), resblocks=(0, 0, 9)),
    "proposed": ArchConfig(channels=(32, 112, 96), resblocks=(4, 10, 0)),
}


def get_preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown generator preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


class Generator:
    def __init__(self, config, seed=0):
        self.config = config
        self.params = p = ParamStore(seed)
        c = config.channels
        self._stem = p.conv("stem", 1, c[0], config.stem_kernel) + p.norm("stem.norm", c[0])
        self._down = [
            p.conv(f"down{l}", c[l - 1], c[l], config.sample_kernel) + p.norm(f"down{l}.norm", c[l])
            for l in range(1, config.levels)
        ]
        self._res = {}
        for l in range(config.levels):
            self._res[l] = [
                p.conv(f"res{l}.{b}.conv1", c[l], c[l], config.res_kernel)
                + p.norm(f"res{l}.{b}.norm1", c[l])
                + p.conv(f"res{l}.{b}.conv2", c[l], c[l], config.res_kernel)
                + p.norm(f"res{l}.{b}.norm2", c[l])
                for b in range(config.resblocks[l])
            ]
        self._up = {
            l: p.conv_transpose(f"up{l}", c[l + 1], c[l], config.sample_kernel) + p.norm(f"up{l}.norm", c[l])
            for l in reversed(range(config.levels - 1))
        }
        self._head = p.conv("head", c[0], 1, config.head_kernel)

    def _resblock(self, h, blk):
        w1, b1, g1, s1, w2, b2, g2, s2 = blk
        pad = self.config.res_kernel // 2
        y = ops.relu(ops.instance_norm(ops.conv2d(h, w1, b1, 1, pad), g1, s1))
        y = ops.instance_norm(ops.conv2d(y, w2, b2, 1, pad), g2, s2)
        return ops.add(h, y)

    def __call__(self, x):
        cfg = self.config
        factor = 2 ** (cfg.levels - 1)
        if x.ndim != 4 or x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeError(f"generator input {x.shape} must be (N, 1, H, W) with H, W divisible by {factor}")
        w, b, g, s = self._stem
        h = ops.relu(ops.instance_norm(ops.conv2d(x, w, b, 1, cfg.stem_kernel // 2), g, s))
        for w, b, g, s in self._down:
            h = ops.relu(ops.instance_norm(ops.conv2d(h, w, b, 2, 1), g, s))
        for blk in self._res[cfg.levels - 1]:
            h = self._resblock(h, blk)
        for l in reversed(range(cfg.levels - 1)):
            w, b, g, s = self._up[l]
            h = ops.relu(ops.instance_norm(ops.conv_transpose2d(h, w, b, 2, 1), g, s))
            for blk in self._res[l]:
                h = self._resblock(h, blk)
        w, b = self._head
        out = ops.conv2d(h, w, b, 1, cfg.head_kernel // 2)
        return ops.tanh(out) if cfg.final_activation == "tanh" else out


def build_generator(config, seed=0):
    return Generator(config, seed)


@dataclass(frozen=True)
class DiscConfig:
    base_channels: int = 64
    n_strided: int = 3
    n_heads: int = 2
    kernel: int = 4
    slope: float = 0.2


class Discriminator:
    """Conditional patch classifier on the channel-concatenation (condition, candidate)."""

    def __init__(self, config=DiscConfig(), seed=0):
        self.config = config
        self.params = p = ParamStore(seed)
        k = config.kernel
        widths = [2] + [config.base_channels * 2 ** i for i in range(config.n_strided + config.n_heads - 1)]
        self._layers = []
        n_layers = config.n_strided + config.n_heads
        for i in range(n_layers):
            last = i == n_layers - 1
            c_out = 1 if last else widths[i + 1]
            w, b = p.conv(f"layer{i}", widths[i], c_out, k)
            norm = p.norm(f"layer{i}.norm", c_out) if 0 < i < n_layers - 1 else None
            stride = 2 if i < config.n_strided else 1
            self._layers.append((w, b, norm, stride, last))

    def logit_size(self, h, w):
        k = self.config.kernel
        for _, _, _, stride, _ in self._layers:
            h = (h + 2 - k) // stride + 1
            w = (w + 2 - k) // stride + 1
            if h < 1 or w < 1:
                return (0, 0)
        return (h, w)

    def __call__(self, condition, candidate):
        if min(self.logit_size(*condition.shape[2:])) < 1:
            raise ShapeError(f"input {condition.shape[2:]} too small for the discriminator stack")
        h = ops.concat([condition, candidate], axis=1)
        for w, b, norm, stride, last in self._layers:
            h = ops.conv2d(h, w, b, stride, 1)
            if last:
                break
            if norm is not None:
                h = ops.instance_norm(h, *norm)
            h = ops.leaky_relu(h, self.config.slope)
        return h


def build_discriminator(seed=0, config=DiscConfig()):
    return Discriminator(config, seed)


@dataclass(frozen=True)
class FeatureNetConfig:
    stages: int = 4
    channels: tuple = (16, 32, 64, 64)
    seed: int = 1234
    weights: str = "frozen_random"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.stages < 2 or len(self.channels) != self.stages:
            raise ValueError("feature net needs >= 2 stages and one width per stage")
        if self.weights not in ("frozen_random", "loaded"):
            raise ValueError("weights must be 'frozen_random' or 'loaded'")


class FeatureNet:
    """Fixed conv + ReLU stages, each halving resolution; never trained."""

    def __init__(self, config=FeatureNetConfig()):
        self.config = config
        self.params = p = ParamStore(config.seed)
        widths = (1,) + config.channels
        self._stages = [p.conv(f"stage{s}", widths[s], widths[s + 1], 3) for s in range(config.stages)]
        for t in p.values():
            t.requires_grad = False

    def load(self, arrays):
        self.params.load_state_dict(arrays)
        for t in self.params.values():
            t.requires_grad = False

    def __call__(self, x):
        feats = []
        h = x
        for w, b in self._stages:
            h = ops.relu(ops.conv2d(h, w, b, 2, 1))
            feats.append(h)
        return feats


def build_feature_net(config=FeatureNetConfig(), weights=None):
    net = FeatureNet(config)
    if config.weights == "loaded":
        if weights is None:
            raise ValueError("feature net configured with loaded weights but none supplied")
        net.load(weights)
    return net
