"""
Following shapes through the network
====================================

The structural branch is four strided convolutions (no pooling). The
functional branch alternates a residual per-frame region mixer with a strided
temporal convolution, keeping the region count fixed.
"""

import numpy as np

from bpmfusion.model import (
    ModelConfig,
    SfamConfig,
    forward,
    init_params,
    p2fem_extents,
    sfam_forward,
    smri_feature_width,
)
from bpmfusion.tensor_core import Tape, Tensor

config = ModelConfig(sfam=SfamConfig(regions=116))
print("structural extents per layer:", p2fem_extents(config, (64, 64, 48)))
print("flattened width:", smri_feature_width(config, (64, 64, 48)))

params = init_params(config, "fmri_only", frames=210, seed=0)
trace = []
sfam_forward(params, Tensor(np.zeros((1, 210, 116), np.float32)), config, trace=trace)
for shape in trace:
    print("  after unit:", shape)

# Ablation modes route a single branch straight into its own head.
small = ModelConfig(sfam=SfamConfig(regions=16))
rng = np.random.default_rng(0)
vols = Tensor(rng.standard_normal((3, 1, 32, 32, 24)).astype(np.float32))
series = Tensor(rng.standard_normal((3, 64, 16)).astype(np.float32))
for mode in ("multimodal", "smri_only", "fmri_only"):
    p = init_params(small, mode, (32, 32, 24), 64, seed=0)
    with Tape() as tape:
        logits = forward(p, vols, series, small, mode)
    print(f"{mode:>10}: logits {logits.shape}, {p.num_parameters()} parameters, "
          f"{tape.op_names().count('conv3d')} conv3d ops")
