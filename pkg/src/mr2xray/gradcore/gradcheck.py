"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mr2xray.gradcore.tensor import Tensor, backward, precision
from mr2xray.gradcore import ops


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def _rel_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(fn, shapes, tolerance=1e-5, seed=0, h=1e-6, inputs=None):
    """Compare analytic and central-difference gradients of ``fn``.

    ``fn`` takes one tensor per entry of ``shapes`` and returns a tensor; a
    fixed random projection reduces non-scalar outputs to a scalar. The error
    per input is max|analytic - numeric| / max(|analytic|, |numeric|).
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        if inputs is None:
            inputs = [rng.standard_normal(s) for s in shapes]
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
        probe = None

        def scalar(vals, track):
            nonlocal probe
            ts = [Tensor(v, requires_grad=track) for v in vals]
            out = fn(*ts)
            if probe is None:
                probe = rng.standard_normal(out.shape)
            return ts, ops.sum(ops.mul(out, probe)) if out.size > 1 else out

        ts, loss = scalar(arrays, True)
        backward(loss)
        errors = []
        for i, t in enumerate(ts):
            analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
            numeric = np.zeros_like(arrays[i])
            flat = arrays[i].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fp = scalar(arrays, False)[1].item()
                flat[j] = orig - h
                fm = scalar(arrays, False)[1].item()
                flat[j] = orig
                numeric.reshape(-1)[j] = (fp - fm) / (2 * h)
            errors.append(_rel_error(analytic, numeric))
    return GradCheckReport(max(errors), errors, tolerance)
