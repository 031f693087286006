"""Parameter containers, initialization and checkpoints."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..data import bpmv
from ..errors import ConfigError, DataError
from ..kvconfig import format_config, parse_config
from ..seeding import rng_for
from ..tensor_core import Tensor, conv_output_extent
from .config import MODES, ModelConfig


class ModelParams:
    """Named learnable tensors plus non-learnable buffers (BN running statistics)."""

    def __init__(self, weights: dict[str, Tensor] | None = None, buffers: dict[str, Tensor] | None = None):
        self.weights = dict(weights or {})
        self.buffers = dict(buffers or {})

    def __getitem__(self, name: str) -> Tensor:
        if name in self.weights:
            return self.weights[name]
        return self.buffers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.weights or name in self.buffers

    def names(self) -> list[str]:
        return list(self.weights) + list(self.buffers)

    def trainable(self) -> list[Tensor]:
        return list(self.weights.values())

    def zero_grad(self) -> None:
        for t in self.weights.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.weights.items()},
            {k: Tensor(v.data.copy(), name=k) for k, v in self.buffers.items()},
        )

    def num_parameters(self, prefix: str = "") -> int:
        return sum(t.size for k, t in self.weights.items() if k.startswith(prefix))

    def state(self) -> dict[str, np.ndarray]:
        return {k: self[k].data for k in self.names()}


def p2fem_extents(config: ModelConfig, vol_extents) -> list[tuple[int, int, int]]:
    """Spatial extents after each P2FEM layer; fails on the first layer the input cannot support."""
    sizes, cur = [], tuple(int(e) for e in vol_extents)
    for i, layer in enumerate(config.p2fem.layers):
        for axis, extent in zip("DHW", cur):
            if layer.kernel_size > extent + 2 * layer.pad:
                raise ConfigError(
                    f"P2FEM layer {i}: kernel {layer.kernel_size} exceeds padded extent "
                    f"{extent + 2 * layer.pad} on axis {axis} (input extents {tuple(vol_extents)})"
                )
        cur = tuple(conv_output_extent(e, layer.kernel_size, layer.stride, layer.pad) for e in cur)
        sizes.append(cur)
    return sizes


def sfam_frame_counts(config: ModelConfig, frames: int) -> list[int]:
    counts, m = [], int(frames)
    s = config.sfam
    for u in range(s.num_units):
        if s.kernel > m + 2 * s.padding:
            raise ConfigError(f"SFAM unit {u}: kernel {s.kernel} exceeds padded frame count {m + 2 * s.padding}")
        m = conv_output_extent(m, s.kernel, s.stride, s.padding)
        counts.append(m)
    return counts


def smri_feature_width(config: ModelConfig, vol_extents) -> int:
    return config.p2fem.out_channels * int(np.prod(p2fem_extents(config, vol_extents)[-1]))


def head_input_width(config: ModelConfig, mode: str) -> int:
    if mode == "multimodal":
        return config.fusion.target_size + config.sfam.regions
    if mode == "smri_only":
        return config.fusion.target_size
    if mode == "fmri_only":
        return config.sfam.regions
    raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def parameter_shapes(config: ModelConfig, mode: str, vol_extents=None, frames=None) -> dict[str, tuple]:
    """Shape of every learnable tensor for ``mode``."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    shapes: dict[str, tuple] = {}
    if mode in ("multimodal", "smri_only"):
        if vol_extents is None:
            raise ConfigError("volume extents are required to size the sMRI branch")
        c_in = config.p2fem.input_channels
        for i, layer in enumerate(config.p2fem.layers):
            k = layer.kernel_size
            shapes[f"p2fem.{i}.conv.weight"] = (layer.out_channels, c_in // layer.groups, k, k, k)
            shapes[f"p2fem.{i}.conv.bias"] = (layer.out_channels,)
            shapes[f"p2fem.{i}.bn.gamma"] = (layer.out_channels,)
            shapes[f"p2fem.{i}.bn.beta"] = (layer.out_channels,)
            c_in = layer.out_channels
        shapes["fusion.proj.weight"] = (config.fusion.target_size, smri_feature_width(config, vol_extents))
        shapes["fusion.proj.bias"] = (config.fusion.target_size,)
    if mode in ("multimodal", "fmri_only"):
        if frames is not None:
            sfam_frame_counts(config, frames)
        n = config.sfam.regions
        for u in range(config.sfam.num_units):
            shapes[f"sfam.{u}.spatial.weight"] = (n, n)
            shapes[f"sfam.{u}.spatial.bias"] = (n,)
            shapes[f"sfam.{u}.spatial.bn.gamma"] = (n,)
            shapes[f"sfam.{u}.spatial.bn.beta"] = (n,)
            shapes[f"sfam.{u}.temporal.weight"] = (n, n, config.sfam.kernel)
            shapes[f"sfam.{u}.temporal.bias"] = (n,)
    width = head_input_width(config, mode)
    if config.fusion.classifier == "linear":
        shapes["head.0.weight"] = (1, width)
        shapes["head.0.bias"] = (1,)
    else:
        dims = (width,) + config.fusion.dense_hidden + (1,)
        for j, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"head.{j}.weight"] = (b, a)
            shapes[f"head.{j}.bias"] = (b,)
    return shapes


def _fan_in(name: str, shapes: dict[str, tuple]) -> int:
    if name.endswith(".bias"):
        shape = shapes[name[: -len("bias")] + "weight"]
    else:
        shape = shapes[name]
    return int(np.prod(shape[1:]))


def init_params(config: ModelConfig, mode: str, vol_extents=None, frames=None, seed: int = 0,
                dtype=np.float32) -> ModelParams:
    """Fresh parameters; each tensor draws from its own seed-derived stream.

    Conv and linear tensors are uniform in ``+-1/sqrt(fan_in)``; BN starts at
    gamma=1, beta=0 with running mean 0 and variance 1.
    """
    shapes = parameter_shapes(config, mode, vol_extents, frames)
    weights, buffers = {}, {}
    for name, shape in shapes.items():
        if name.endswith(".bn.gamma"):
            data = np.ones(shape)
        elif name.endswith(".bn.beta"):
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shapes))
            data = rng_for(seed, "init", name).uniform(-bound, bound, size=shape)
        weights[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
        if name.endswith(".bn.gamma"):
            stem = name[: -len("gamma")]
            buffers[stem + "running_mean"] = Tensor(np.zeros(shape, dtype=dtype), name=stem + "running_mean")
            buffers[stem + "running_var"] = Tensor(np.ones(shape, dtype=dtype), name=stem + "running_var")
    return ModelParams(weights, buffers)


# ---------------------------------------------------------------------------
# checkpoints: BPMV tensors + "name<TAB>relative_path" index + key = value config

INDEX_NAME = "index.tsv"
CONFIG_NAME = "config.txt"


def save_checkpoint(directory, params: ModelParams, config: ModelConfig, mode: str,
                    extra: dict[str, str] | None = None) -> None:
    root = Path(directory)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    lines = []
    for name in params.names():
        rel = f"tensors/{name}.bpmv"
        bpmv.write_array(root / rel, params[name].data)
        lines.append(f"{name}\t{rel}\n")
    (root / INDEX_NAME).write_text("".join(lines), encoding="utf-8")
    flat = {"mode": mode, **config.to_flat(), **(extra or {})}
    (root / CONFIG_NAME).write_text(format_config(flat), encoding="utf-8")


def load_checkpoint(directory, dtype=np.float32) -> tuple[ModelParams, ModelConfig, str]:
    root = Path(directory)
    flat = parse_config((root / CONFIG_NAME).read_text(encoding="utf-8"))
    mode = flat.pop("mode", "multimodal")
    model_keys = set(ModelConfig().to_flat())
    config = ModelConfig.from_flat({k: v for k, v in flat.items() if k in model_keys})
    weights, buffers = {}, {}
    for lineno, line in enumerate((root / INDEX_NAME).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, rel = line.split("\t")
        except ValueError:
            raise DataError(f"{os.fspath(root / INDEX_NAME)}:{lineno}: expected name<TAB>path") from None
        data = bpmv.read_array(root / rel).astype(dtype)
        if name.endswith("running_mean") or name.endswith("running_var"):
            buffers[name] = Tensor(data, name=name)
        else:
            weights[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(weights, buffers), config, mode
