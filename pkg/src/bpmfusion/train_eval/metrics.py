"""Confusion counts and the BACC / F1 / SEN / SPEC suite (BD is the positive class)."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

METRIC_NAMES = ("bacc", "f1", "sen", "spec")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    bacc: float
    f1: float
    sen: float
    spec: float
    counts: ConfusionCounts | None = None
    undefined: tuple[str, ...] = field(default=())  # metrics whose denominator was 0

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def confusion_counts(targets, predictions) -> ConfusionCounts:
    """Tally predictions against 0/1 targets."""
    y = np.asarray(targets).astype(bool)
    p = np.asarray(predictions).astype(bool)
    if y.shape != p.shape:
        raise ValueError(f"targets {y.shape} and predictions {p.shape} differ in shape")
    return ConfusionCounts(
        tp=int(np.count_nonzero(y & p)),
        tn=int(np.count_nonzero(~y & ~p)),
        fp=int(np.count_nonzero(~y & p)),
        fn=int(np.count_nonzero(y & ~p)),
    )


def confusion_from_probabilities(probabilities, targets, threshold: float = 0.5) -> ConfusionCounts:
    """Predict BD where ``probability >= threshold``."""
    return confusion_counts(targets, np.asarray(probabilities) >= threshold)


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


def compute_metrics(c: ConfusionCounts) -> MetricsReport:
    """F1 = 2TP/(2TP+FP+FN), SEN = TP/(TP+FN), SPEC = TN/(TN+FP), BACC = (SEN+SPEC)/2.

    A metric whose denominator is zero is reported as 0 and listed in
    ``undefined``; BACC is computed from the (possibly zeroed) SEN and SPEC.
    """
    undefined = []
    values = {}
    for name, num, den in (("f1", 2 * c.tp, 2 * c.tp + c.fp + c.fn), ("sen", c.tp, c.tp + c.fn),
                           ("spec", c.tn, c.tn + c.fp)):
        r = _ratio(num, den)
        if r is None:
            undefined.append(name)
            values[name] = 0.0
        else:
            values[name] = float(r)
    bacc = (values["sen"] + values["spec"]) / 2
    if "sen" in undefined or "spec" in undefined:
        undefined.append("bacc")
    return MetricsReport(bacc, values["f1"], values["sen"], values["spec"], c, tuple(undefined))
