"""Named parameter storage and the Adam optimizer."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from mr2xray.gradcore.tensor import Tensor, get_default_dtype


class StateError(RuntimeError):
    pass


class ParamStore:
    """Ordered name -> Tensor mapping with seeded Kaiming-style initialization."""

    def __init__(self, seed=0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._params = {}

    def add(self, name, value, requires_grad=True):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=get_default_dtype()), requires_grad=requires_grad, name=name)
        self._params[name] = t
        return t

    def kaiming(self, name, shape, fan_in):
        std = math.sqrt(2.0 / fan_in)
        return self.add(name, self._rng.standard_normal(shape) * std)

    def conv(self, name, c_in, c_out, k, bias=True):
        w = self.kaiming(f"{name}.weight", (c_out, c_in, k, k), c_in * k * k)
        b = self.add(f"{name}.bias", np.zeros(c_out)) if bias else None
        return w, b

    def conv_transpose(self, name, c_in, c_out, k, bias=True):
        w = self.kaiming(f"{name}.weight", (c_in, c_out, k, k), c_out * k * k)
        b = self.add(f"{name}.bias", np.zeros(c_out)) if bias else None
        return w, b

    def norm(self, name, c):
        return self.add(f"{name}.gain", np.ones(c)), self.add(f"{name}.shift", np.zeros(c))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    @contextlib.contextmanager
    def frozen(self):
        """Stop gradient flow into these parameters for the duration."""
        flags = {k: p.requires_grad for k, p in self._params.items()}
        for p in self._params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for k, p in self._params.items():
                p.requires_grad = flags[k]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state_dict(self, arrays):
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self._params.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {a.shape} vs {p.shape}")
            p.data = a.astype(p.dtype).copy()


def count_params(store):
    return int(np.sum([p.size for p in store.values()], dtype=np.int64)) if len(store) else 0


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(params, state, names=None):
    """One bias-corrected Adam update over ``params``; gradients are zeroed after."""
    names = list(params) if names is None else list(names)
    for name in names:
        if params[name].grad is None and params[name].requires_grad:
            raise StateError(f"parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in names:
        p = params[name]
        if not p.requires_grad:
            continue
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
        p.grad = None
