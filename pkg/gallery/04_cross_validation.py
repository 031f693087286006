"""
Five-fold cross-validation
==========================

Each fold trains a freshly initialized model on the other four folds and is
scored on its own subjects. Metrics are averaged over folds; pooled counts are
kept alongside.
"""

import numpy as np

from bpmfusion.data import generate_synthetic_cohort, to_arrays
from bpmfusion.model import ModelConfig
from bpmfusion.train_eval import ConfusionCounts, TrainConfig, compute_metrics, cross_validate, metrics_csv, text_report

# metric definitions on a hand-sized example
r = compute_metrics(ConfusionCounts(tp=7, tn=8, fp=2, fn=3))
print(f"bacc={r.bacc:.3f} f1={r.f1:.4f} sen={r.sen:.3f} spec={r.spec:.3f}")

# a degenerate denominator is reported as 0 and flagged
print(compute_metrics(ConfusionCounts(tn=5)).undefined)

cohort = generate_synthetic_cohort(50, vol_extents=(16, 16, 12), frames=64, regions=8, effect_strength=2.0, seed=1)
data = to_arrays(cohort)
report = cross_validate(ModelConfig(), data, TrainConfig(epochs=15, seed=0), k=5)
print(metrics_csv(report))
print(text_report(report, "multimodal"))
print("per-fold final training loss:", np.round([f.history[-1] for f in report.folds], 4))
