"""Mini-batch training loop and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from ..data.manifest import CohortArrays
from ..errors import ConfigError, NumericalError
from ..model import MODES, ModelConfig, ModelParams, forward, predict_proba
from ..seeding import rng_for
from ..tensor_core import Tape, Tensor, bce_with_logits
from .metrics import ConfusionCounts, confusion_from_probabilities
from .optim import SGD, Adam

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    class_weighting: bool = False
    mode: str = "multimodal"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    def to_flat(self) -> dict[str, str]:
        return {f.name: (str(getattr(self, f.name)).lower() if f.type in ("bool", bool)
                         else str(getattr(self, f.name))) for f in fields(self)}

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "TrainConfig":
        kinds = {"learning_rate": float, "epochs": int, "batch_size": int, "optimizer": str, "momentum": float,
                 "weight_decay": float, "seed": int, "class_weighting": _parse_bool, "mode": str}
        unknown = set(flat) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown training config key(s): {sorted(unknown)}")
        values = {}
        for key, raw in flat.items():
            try:
                values[key] = kinds[key](raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        return cls(**values)


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def class_weights(targets) -> tuple[float, float]:
    """Inverse class-frequency weights ``n / (2 n_c)`` for labels 0 and 1."""
    targets = np.asarray(targets)
    n = len(targets)
    counts = [max(int(np.sum(targets == c)), 1) for c in (0, 1)]
    return n / (2 * counts[0]), n / (2 * counts[1])


def _batch_tensors(data: CohortArrays, index, mode):
    vols = Tensor(data.volumes[index]) if mode != "fmri_only" else None
    series = Tensor(data.series[index]) if mode != "smri_only" else None
    return vols, series


def train(model_config: ModelConfig, params: ModelParams, data: CohortArrays, config: TrainConfig,
          callback=None) -> tuple[ModelParams, list[float]]:
    """Minimize the (optionally class-weighted) BCE loss; returns ``params`` and per-epoch mean loss.

    Updates ``params`` in place. Batches are drawn from a shuffling stream
    derived from ``config.seed``. ``callback(epoch, loss)`` may return True to
    stop early.
    """
    trainable = params.trainable()
    if config.optimizer == "adam":
        opt = Adam(trainable, lr=config.learning_rate, weight_decay=config.weight_decay)
    else:
        opt = SGD(trainable, lr=config.learning_rate, momentum=config.momentum, weight_decay=config.weight_decay)
    weights = class_weights(data.targets) if config.class_weighting else None
    rng = rng_for(config.seed, "shuffle")
    n = len(data)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            index = np.sort(order[start:start + config.batch_size])
            vols, series = _batch_tensors(data, index, config.mode)
            params.zero_grad()
            with Tape() as tape:
                logits = forward(params, vols, series, model_config, config.mode, training=True)
                loss = bce_with_logits(logits, data.targets[index], weights)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            tape.backward(loss)
            opt.step()
            total += value * len(index)
        history.append(total / n)
        logger.debug("epoch %d loss %.6f", epoch, history[-1])
        if callback is not None and callback(epoch, history[-1]):
            break
    return params, history


def evaluate(model_config: ModelConfig, params: ModelParams, data: CohortArrays, mode: str = "multimodal",
             threshold: float = 0.5) -> ConfusionCounts:
    """Eval-mode confusion counts; probability >= threshold predicts BD."""
    probs = predict_proba(params, data.volumes, data.series, model_config, mode)
    return confusion_from_probabilities(probs, data.targets, threshold)
