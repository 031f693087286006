"""Optimization loop, stratified cross-validation and metrics."""

from .crossval import CVReport, FoldResult, FoldSplit, cross_validate, fit, kfold_split, metrics_csv, text_report
from .metrics import (
    METRIC_NAMES,
    ConfusionCounts,
    MetricsReport,
    compute_metrics,
    confusion_counts,
    confusion_from_probabilities,
)
from .optim import SGD, Adam
from .training import TrainConfig, class_weights, evaluate, train
