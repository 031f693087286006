"""Finite-difference verification suite for every differentiable operator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ConvLayer, FusionConfig, ModelConfig, P2femConfig, SfamConfig, forward, init_params
from .tensor_core import Tensor, grad_check
from .tensor_core import ops

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
EPSILON = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _bn_case(rng, training, axis, shape):
    feat = shape[axis]
    x, g, b = _t(rng, *shape), Tensor(rng.uniform(0.5, 1.5, feat), requires_grad=True), _t(rng, feat)
    rm = Tensor(rng.standard_normal(feat) * 0.1)
    rv = Tensor(rng.uniform(0.5, 1.5, feat))
    return (lambda x, g, b: ops.batch_norm(x, g, b, rm, rv, training=training, axis=axis)), [x, g, b]


def operator_cases(seed: int = 0) -> list[tuple[str, Callable, list]]:
    """``(name, closure, inputs)`` triples; closures look operators up at call time."""
    rng = np.random.default_rng(seed)
    labels = np.array([1, 0, 1, 1])
    cases = [
        ("conv3d", lambda x, w, b: ops.conv3d(x, w, b, stride=2, padding=1, groups=2),
         [_t(rng, 2, 4, 5, 4, 5), _t(rng, 6, 2, 3, 3, 3), _t(rng, 6)]),
        ("conv3d_k1", lambda x, w, b: ops.conv3d(x, w, b, stride=1, padding=0),
         [_t(rng, 1, 2, 3, 3, 2), _t(rng, 3, 2, 1, 1, 1), _t(rng, 3)]),
        ("conv1d_time", lambda x, w, b: ops.conv1d_time(x, w, b, stride=2, padding=2),
         [_t(rng, 2, 3, 11), _t(rng, 4, 3, 5), _t(rng, 4)]),
        ("linear", lambda x, w, b: ops.linear(x, w, b), [_t(rng, 2, 3, 4), _t(rng, 5, 4), _t(rng, 5)]),
        ("batch_norm_train", *_bn_case(rng, True, 1, (4, 3, 2, 2))),
        ("batch_norm_train_last_axis", *_bn_case(rng, True, -1, (3, 5, 4))),
        ("batch_norm_eval", *_bn_case(rng, False, 1, (4, 3, 2))),
        ("relu", lambda x: ops.relu(x), [Tensor(rng.choice([-1, 1], 12) * rng.uniform(0.1, 1, 12),
                                                requires_grad=True)]),
        ("add", lambda a, b: ops.add(a, b), [_t(rng, 3, 4), _t(rng, 3, 4)]),
        ("concat", lambda a, b: ops.concat([a, b], axis=-1), [_t(rng, 2, 3), _t(rng, 2, 5)]),
        ("flatten", lambda x: ops.flatten(x, 1), [_t(rng, 2, 3, 4)]),
        ("swapaxes", lambda x: ops.swapaxes(x, 1, 2), [_t(rng, 2, 3, 4)]),
        ("mean", lambda x: ops.mean(x, axis=1), [_t(rng, 2, 5, 3)]),
        ("bce_with_logits", lambda z: ops.bce_with_logits(z, labels), [_t(rng, 4)]),
        ("bce_with_logits_weighted", lambda z: ops.bce_with_logits(z, labels, (1.5, 0.5)), [_t(rng, 4)]),
    ]
    return cases


TINY_MODEL = ModelConfig(
    p2fem=P2femConfig((ConvLayer(2, 3, 2, 1), ConvLayer(4, 3, 2, 2), ConvLayer(4, 3, 2, 2), ConvLayer(4, 1, 1, 2))),
    sfam=SfamConfig(num_units=2, kernel=3, stride=2, padding=1, regions=4),
    fusion=FusionConfig(target_size=3, classifier="dense", dense_hidden=(4,)),
)


def model_case(seed: int = 0, mode: str = "multimodal", config: ModelConfig = TINY_MODEL):
    """Tiny end-to-end network (8x8x8 volumes, 12 frames, 4 regions) in float64."""
    rng = np.random.default_rng(seed)
    params = init_params(config, mode, (8, 8, 8), 12, seed=seed, dtype=np.float64)
    vols = Tensor(rng.standard_normal((3, 1, 8, 8, 8)))
    series = Tensor(rng.standard_normal((3, 12, 4)))
    labels = np.array([1, 0, 1])
    names = params.names()
    weights = params.trainable()

    def closure(*tensors):
        return ops.bce_with_logits(forward(params, vols, series, config, mode, training=True), labels)

    return closure, weights, names


def run_suite(seed: int = 0, include_model: bool = True) -> list[CheckResult]:
    results = []
    for name, fn, inputs in operator_cases(seed):
        results.append(CheckResult(name, grad_check(fn, inputs, EPSILON), OP_TOLERANCE))
    if include_model:
        fn, weights, _ = model_case(seed)
        results.append(CheckResult("bpm_fusion_tiny_model", grad_check(fn, weights, EPSILON), MODEL_TOLERANCE))
    return results


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  max_rel_err={r.max_rel_error:.3e}  tol={r.tolerance:.0e}  "
             f"{'PASS' if r.passed else 'FAIL'}" for r in results]
    return "\n".join(lines) + "\n"
