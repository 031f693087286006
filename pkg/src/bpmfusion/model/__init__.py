"""BPM-Fusion network: P2FEM sMRI encoder, SFAM fMRI encoder, fusion and heads."""

from .config import CLASSIFIERS, MODES, ConvLayer, FusionConfig, ModelConfig, P2femConfig, SfamConfig
from .network import (
    classify,
    forward,
    fuse,
    p2fem_forward,
    predict_logits,
    predict_proba,
    project_smri,
    sfam_forward,
    sfam_spatial_unit,
    sfam_temporal_unit,
)
from .params import (
    ModelParams,
    head_input_width,
    init_params,
    load_checkpoint,
    p2fem_extents,
    parameter_shapes,
    save_checkpoint,
    sfam_frame_counts,
    smri_feature_width,
)
