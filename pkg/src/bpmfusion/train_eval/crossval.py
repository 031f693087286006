"""Stratified k-fold splitting, the cross-validation driver and metric reports."""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ..data.manifest import CohortArrays
from ..errors import ConfigError
from ..model import ModelConfig, ModelParams, init_params
from ..seeding import derive_seed, rng_for
from .metrics import METRIC_NAMES, ConfusionCounts, MetricsReport, compute_metrics
from .training import TrainConfig, evaluate, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]  # (train_ids, test_ids) per fold

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def kfold_split(ids, targets, k: int = 5, seed: int = 0) -> FoldSplit:
    """Stratified split: each class is shuffled and dealt round-robin over the folds.

    The second class continues dealing where the first stopped, so total fold
    sizes also differ by at most one.
    """
    ids = list(ids)
    targets = np.asarray(targets)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(ids) != len(targets):
        raise ConfigError("ids and targets differ in length")
    assignment = np.empty(len(ids), dtype=np.int64)
    cursor = 0
    for cls in (1, 0):
        members = np.flatnonzero(targets == cls)
        if len(members) < k:
            raise ConfigError(f"class {cls} has {len(members)} subjects, fewer than k={k} folds")
        members = rng_for(seed, "kfold", cls).permutation(members)
        assignment[members] = (cursor + np.arange(len(members))) % k
        cursor = (cursor + len(members)) % k
    folds = []
    for f in range(k):
        test = tuple(ids[i] for i in range(len(ids)) if assignment[i] == f)
        train_ids = tuple(ids[i] for i in range(len(ids)) if assignment[i] != f)
        folds.append((train_ids, test))
    return FoldSplit(tuple(folds))


@dataclass
class FoldResult:
    index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    counts: ConfusionCounts
    metrics: MetricsReport
    history: list[float]
    params: ModelParams | None = None


@dataclass
class CVReport:
    folds: list[FoldResult]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    pooled: MetricsReport | None = None

    @classmethod
    def from_folds(cls, folds: list[FoldResult]) -> "CVReport":
        table = np.array([[getattr(f.metrics, m) for m in METRIC_NAMES] for f in folds], dtype=np.float64)
        mean = {m: float(v) for m, v in zip(METRIC_NAMES, table.mean(axis=0))}
        std = {m: float(v) for m, v in zip(METRIC_NAMES, table.std(axis=0))}
        pooled_counts = sum((f.counts for f in folds), ConfusionCounts())
        return cls(folds, mean, std, compute_metrics(pooled_counts))

    @property
    def bacc(self) -> float:
        return self.mean["bacc"]


def _with_regions(model_config: ModelConfig, data: CohortArrays) -> ModelConfig:
    n = data.series.shape[2]
    if model_config.sfam.regions == n:
        return model_config
    return replace(model_config, sfam=replace(model_config.sfam, regions=n))


def fit(model_config: ModelConfig, data: CohortArrays, train_config: TrainConfig, seed: int | None = None):
    """Initialize fresh parameters for ``data`` and train them."""
    model_config = _with_regions(model_config, data)
    seed = train_config.seed if seed is None else seed
    params = init_params(model_config, train_config.mode, data.volumes.shape[2:], data.series.shape[1],
                         seed=derive_seed(seed, "init"), dtype=data.volumes.dtype)
    params, history = train(model_config, params, data, replace(train_config, seed=derive_seed(seed, "train")))
    return model_config, params, history


def cross_validate(model_config: ModelConfig, data: CohortArrays, train_config: TrainConfig, k: int = 5,
                   split: FoldSplit | None = None, keep_params: bool = False) -> CVReport:
    """Train a freshly initialized model per fold and score it on the held-out fold."""
    if len(data) < 2 * k:
        warnings.warn(f"only {len(data)} subjects for {k}-fold cross-validation", stacklevel=2)
    if split is None:
        split = kfold_split(data.ids, data.targets, k, train_config.seed)
    position = {sid: i for i, sid in enumerate(data.ids)}
    results = []
    for f, (train_ids, test_ids) in enumerate(split):
        if set(train_ids) & set(test_ids):
            raise ConfigError(f"fold {f}: train and test sets overlap")
        train_data = data.take([position[i] for i in train_ids])
        test_data = data.take([position[i] for i in test_ids])
        fold_seed = derive_seed(train_config.seed, "fold", f)
        cfg, params, history = fit(model_config, train_data, train_config, seed=fold_seed)
        counts = evaluate(cfg, params, test_data, train_config.mode)
        metrics = compute_metrics(counts)
        logger.info("fold %d: bacc=%.3f f1=%.3f sen=%.3f spec=%.3f", f, metrics.bacc, metrics.f1, metrics.sen,
                    metrics.spec)
        results.append(FoldResult(f, tuple(train_ids), tuple(test_ids), counts, metrics, history,
                                  params if keep_params else None))
    return CVReport.from_folds(results)


# ---------------------------------------------------------------------------
# reports


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def metrics_csv(report: CVReport) -> str:
    """``fold,bacc,f1,sen,spec`` rows per fold, then ``mean`` and ``std`` rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("fold",) + METRIC_NAMES)
    for f in report.folds:
        writer.writerow([f.index] + [_fmt(getattr(f.metrics, m)) for m in METRIC_NAMES])
    writer.writerow(["mean"] + [_fmt(report.mean[m]) for m in METRIC_NAMES])
    writer.writerow(["std"] + [_fmt(report.std[m]) for m in METRIC_NAMES])
    return buf.getvalue()


def text_report(report: CVReport, title: str = "cross-validation") -> str:
    lines = [f"[{title}]"]
    for f in report.folds:
        c = f.counts
        flags = f" undefined={','.join(f.metrics.undefined)}" if f.metrics.undefined else ""
        lines.append(
            f"fold {f.index}: " + " ".join(f"{m}={_fmt(getattr(f.metrics, m))}" for m in METRIC_NAMES)
            + f" tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn}{flags}"
        )
    lines.append("mean: " + " ".join(f"{m}={_fmt(report.mean[m])}" for m in METRIC_NAMES))
    lines.append("std: " + " ".join(f"{m}={_fmt(report.std[m])}" for m in METRIC_NAMES))
    p = report.pooled
    lines.append("pooled: " + " ".join(f"{m}={_fmt(getattr(p, m))}" for m in METRIC_NAMES)
                 + f" tp={p.counts.tp} tn={p.counts.tn} fp={p.counts.fp} fn={p.counts.fn}")
    return "\n".join(lines) + "\n"
