"""Central finite-difference verification of backward rules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], epsilon: float = 1e-5,
               wrt: Sequence[Tensor] | None = None, seed: int = 0) -> float:
    """Maximum elementwise relative error between analytic and numeric gradients.

    Non-scalar outputs are contracted with a fixed random cotangent so that
    every output element contributes. ``wrt`` defaults to every input that
    requires a gradient.
    """
    wrt = [t for t in inputs if t.requires_grad] if wrt is None else list(wrt)
    for t in wrt:
        t.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
    rng = np.random.default_rng(seed)
    cot = np.ones(out.shape) if out.size == 1 else rng.standard_normal(out.shape)
    tape.backward(out, cot.astype(out.dtype))

    def objective() -> float:
        return float(np.sum(fn(*inputs).data.astype(np.float64) * cot))

    worst = 0.0
    for t in wrt:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64)
        numeric = np.empty(t.shape)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = objective()
            flat[i] = orig - epsilon
            f_minus = objective()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2 * epsilon)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst
