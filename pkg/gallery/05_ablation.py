"""
Single-modality ablation
========================

The three modes share one fold assignment and one seed, so differences come
from the inputs each model sees. The acceptance suite runs this configuration
through ``bpmfusion ablate``; there the ROI series pass through float32 files,
so its numbers differ slightly from this in-memory run. Takes a minute or two
on one core.
"""

from bpmfusion.data import generate_synthetic_cohort, to_arrays
from bpmfusion.model import ModelConfig
from bpmfusion.train_eval import TrainConfig, cross_validate, kfold_split

cohort = generate_synthetic_cohort(100, vol_extents=(16, 16, 12), frames=128, regions=16, effect_strength=1.5,
                                   fmri_effect_strength=0.8, seed=0)
data = to_arrays(cohort)
split = kfold_split(data.ids, data.targets, 5, seed=0)

for name, mode in (("smri", "smri_only"), ("fmri", "fmri_only"), ("fused", "multimodal")):
    train_config = TrainConfig(epochs=60, weight_decay=0.1, seed=0, mode=mode)
    report = cross_validate(ModelConfig(), data, train_config, split=split)
    print(f"{name:>5}: bacc={report.mean['bacc']:.3f} +- {report.std['bacc']:.3f}")
