"""Forward pass of the bi-pyramid fusion network.

sMRI: four strided, grouped conv3d -> BN -> ReLU blocks (no pooling), flattened.
fMRI: ``num_units`` x (per-frame FC residual unit -> temporal conv), then the
mean over surviving frames. The sMRI feature is projected to the fusion width
and concatenated in front of the fMRI feature before the classifier head.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from ..tensor_core import ops
from ..tensor_core.tensor import Tensor
from .config import MODES, ModelConfig
from .params import ModelParams


def _bn(params: ModelParams, prefix: str, x: Tensor, config: ModelConfig, training: bool, axis: int) -> Tensor:
    return ops.batch_norm(
        x, params[prefix + "gamma"], params[prefix + "beta"],
        params[prefix + "running_mean"], params[prefix + "running_var"],
        eps=config.bn_eps, momentum=config.bn_momentum, training=training, axis=axis,
    )


def p2fem_forward(params: ModelParams, volumes: Tensor, config: ModelConfig, training: bool = True) -> Tensor:
    """``[B, C, D, H, W]`` volumes -> ``[B, F_s]`` structural features."""
    if volumes.ndim != 5:
        raise DimensionError(f"P2FEM expects [B, C, D, H, W], got {volumes.shape}")
    x = volumes
    for i, layer in enumerate(config.p2fem.layers):
        for axis, extent in zip("DHW", x.shape[2:]):
            if layer.kernel_size > extent + 2 * layer.pad:
                raise ConfigError(
                    f"P2FEM layer {i}: kernel {layer.kernel_size} exceeds padded extent "
                    f"{extent + 2 * layer.pad} on axis {axis}"
                )
        x = ops.conv3d(x, params[f"p2fem.{i}.conv.weight"], params[f"p2fem.{i}.conv.bias"],
                       stride=layer.stride, padding=layer.pad, groups=layer.groups)
        x = _bn(params, f"p2fem.{i}.bn.", x, config, training, axis=1)
        x = ops.relu(x)
    return ops.flatten(x, 1)


def sfam_spatial_unit(params: ModelParams, x: Tensor, unit: int, config: ModelConfig,
                      training: bool = True) -> Tensor:
    """Residual per-frame FC block ``x + BN(ReLU(linear(x)))`` on ``[B, M, N]``."""
    p = f"sfam.{unit}.spatial."
    h = ops.linear(x, params[p + "weight"], params[p + "bias"])
    h = ops.relu(h)
    h = _bn(params, p + "bn.", h, config, training, axis=-1)
    return ops.add(x, h)


def sfam_temporal_unit(params: ModelParams, x: Tensor, unit: int, config: ModelConfig) -> Tensor:
    """Strided convolution along time with regions as channels: ``[B, M, N] -> [B, M', N]``."""
    s = config.sfam
    h = ops.swapaxes(x, 1, 2)
    h = ops.conv1d_time(h, params[f"sfam.{unit}.temporal.weight"], params[f"sfam.{unit}.temporal.bias"],
                        stride=s.stride, padding=s.padding)
    return ops.swapaxes(h, 1, 2)


def sfam_forward(params: ModelParams, series: Tensor, config: ModelConfig, training: bool = True,
                 trace: list | None = None) -> Tensor:
    """``[B, M, N]`` ROI series -> ``[B, N]`` functional features.

    If ``trace`` is given, the shape after every spatial and temporal unit is
    appended to it.
    """
    if series.ndim != 3:
        raise DimensionError(f"SFAM expects [B, M, N], got {series.shape}")
    if series.shape[2] != config.sfam.regions:
        raise ConfigError(f"SFAM configured for N={config.sfam.regions} regions, input has {series.shape[2]}")
    x = series
    for u in range(config.sfam.num_units):
        x = sfam_spatial_unit(params, x, u, config, training)
        if trace is not None:
            trace.append(x.shape)
        x = sfam_temporal_unit(params, x, u, config)
        if trace is not None:
            trace.append(x.shape)
    return ops.mean(x, axis=1)


def project_smri(params: ModelParams, smri_feat: Tensor) -> Tensor:
    return ops.linear(smri_feat, params["fusion.proj.weight"], params["fusion.proj.bias"])


def fuse(params: ModelParams, smri_feat: Tensor, fmri_feat: Tensor) -> Tensor:
    """Project the sMRI feature to the fusion width, then ``concat([sMRI, fMRI])``."""
    return ops.concat([project_smri(params, smri_feat), fmri_feat], axis=-1)


def classify(params: ModelParams, feat: Tensor, config: ModelConfig) -> Tensor:
    """Linear or dense head returning one logit per sample."""
    layers = 1 if config.fusion.classifier == "linear" else len(config.fusion.dense_hidden) + 1
    expected = params["head.0.weight"].shape[1]
    if feat.shape[-1] != expected:
        raise ConfigError(f"classifier head expects width {expected}, feature width is {feat.shape[-1]}")
    x = feat
    for j in range(layers):
        x = ops.linear(x, params[f"head.{j}.weight"], params[f"head.{j}.bias"])
        if j < layers - 1:
            x = ops.relu(x)
    return ops.flatten(x, 0)


def forward(params: ModelParams, volumes: Tensor | None, series: Tensor | None, config: ModelConfig,
            mode: str = "multimodal", training: bool = True) -> Tensor:
    """Logits ``[B]`` for the requested modality routing.

    ``smri_only`` never touches ``series`` and ``fmri_only`` never touches
    ``volumes``; the missing modality is not zero-filled.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "smri_only":
        feat = project_smri(params, p2fem_forward(params, volumes, config, training))
    elif mode == "fmri_only":
        feat = sfam_forward(params, series, config, training)
    else:
        feat = fuse(params, p2fem_forward(params, volumes, config, training),
                    sfam_forward(params, series, config, training))
    return classify(params, feat, config)


def predict_logits(params: ModelParams, volumes: np.ndarray, series: np.ndarray, config: ModelConfig,
                   mode: str = "multimodal", batch_size: int = 32) -> np.ndarray:
    """Eval-mode logits without recording a tape."""
    n = len(volumes) if volumes is not None else len(series)
    out = []
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        v = Tensor(volumes[sl]) if (volumes is not None and mode != "fmri_only") else None
        s = Tensor(series[sl]) if (series is not None and mode != "smri_only") else None
        out.append(forward(params, v, s, config, mode, training=False).data)
    return np.concatenate(out)


def predict_proba(params: ModelParams, volumes, series, config: ModelConfig, mode: str = "multimodal",
                  batch_size: int = 32) -> np.ndarray:
    return ops.sigmoid(predict_logits(params, volumes, series, config, mode, batch_size))
