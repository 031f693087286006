"""Architecture hyperparameters for the two encoders, the fusion step and the head."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

MODES = ("multimodal", "smri_only", "fmri_only")
CLASSIFIERS = ("linear", "dense")


@dataclass(frozen=True)
class ConvLayer:
    out_channels: int
    kernel_size: int
    stride: int
    groups: int = 1
    padding: int | None = None  # None -> kernel_size // 2

    @property
    def pad(self) -> int:
        return self.kernel_size // 2 if self.padding is None else self.padding


DEFAULT_P2FEM_LAYERS = (
    ConvLayer(8, 7, 2, 1),
    ConvLayer(16, 5, 2, 2),
    ConvLayer(32, 5, 2, 2),
    ConvLayer(32, 3, 2, 2),
)


@dataclass(frozen=True)
class P2femConfig:
    """Four pooling-free conv blocks; downsampling comes from the strides."""

    layers: tuple[ConvLayer, ...] = DEFAULT_P2FEM_LAYERS
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) != 4:
            raise ConfigError(f"P2FEM needs exactly four conv layers, got {len(self.layers)}")
        if sum(layer.stride >= 2 for layer in self.layers) < 3:
            raise ConfigError("P2FEM needs stride >= 2 on at least three layers")
        c_in = self.input_channels
        for i, layer in enumerate(self.layers):
            if min(layer.out_channels, layer.kernel_size, layer.stride, layer.groups) < 1 or layer.pad < 0:
                raise ConfigError(f"P2FEM layer {i}: non-positive setting in {layer}")
            if c_in % layer.groups or layer.out_channels % layer.groups:
                raise ConfigError(
                    f"P2FEM layer {i}: groups={layer.groups} must divide C_in={c_in} and C_out={layer.out_channels}"
                )
            c_in = layer.out_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels


@dataclass(frozen=True)
class SfamConfig:
    """Stacked (spatial FC-residual -> temporal conv) units over an ``[M, N]`` series."""

    num_units: int = 3
    kernel: int = 5
    stride: int = 2
    padding: int = 2
    regions: int = 116

    def __post_init__(self):
        if self.num_units < 1:
            raise ConfigError("SFAM needs at least one unit")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"SFAM temporal settings invalid: k={self.kernel}, s={self.stride}, p={self.padding}")
        if self.regions < 1:
            raise ConfigError("SFAM region count must be >= 1")


@dataclass(frozen=True)
class FusionConfig:
    target_size: int = 16
    classifier: str = "linear"
    dense_hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        object.__setattr__(self, "dense_hidden", tuple(self.dense_hidden))
        if self.target_size < 1:
            raise ConfigError("fusion target size must be >= 1")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.classifier == "dense" and (not self.dense_hidden or min(self.dense_hidden) < 1):
            raise ConfigError("dense classifier needs at least one positive hidden width")


@dataclass(frozen=True)
class ModelConfig:
    p2fem: P2femConfig = field(default_factory=P2femConfig)
    sfam: SfamConfig = field(default_factory=SfamConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def to_flat(self) -> dict[str, str]:
        """``key -> value`` strings, the inverse of :meth:`from_flat`."""
        layers = self.p2fem.layers

        def ints(vals):
            return ",".join(str(v) for v in vals)

        return {
            "p2fem_channels": ints(l.out_channels for l in layers),
            "p2fem_kernels": ints(l.kernel_size for l in layers),
            "p2fem_strides": ints(l.stride for l in layers),
            "p2fem_groups": ints(l.groups for l in layers),
            "p2fem_paddings": ints(l.pad for l in layers),
            "input_channels": str(self.p2fem.input_channels),
            "sfam_units": str(self.sfam.num_units),
            "sfam_kernel": str(self.sfam.kernel),
            "sfam_stride": str(self.sfam.stride),
            "sfam_padding": str(self.sfam.padding),
            "regions": str(self.sfam.regions),
            "fusion_dim": str(self.fusion.target_size),
            "classifier": self.fusion.classifier,
            "dense_hidden": ints(self.fusion.dense_hidden),
            "bn_eps": repr(self.bn_eps),
            "bn_momentum": repr(self.bn_momentum),
        }

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ModelConfig":
        base = cls().to_flat()
        unknown = set(flat) - set(base)
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        merged = {**base, **flat}
        if "p2fem_kernels" in flat and "p2fem_paddings" not in flat:
            merged["p2fem_paddings"] = ",".join(str(int(k) // 2) for k in merged["p2fem_kernels"].split(","))

        def int_list(key):
            try:
                vals = tuple(int(v) for v in merged[key].split(","))
            except ValueError:
                raise ConfigError(f"{key}: expected comma-separated integers, got {merged[key]!r}") from None
            return vals

        def scalar(key, kind):
            try:
                return kind(merged[key])
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {merged[key]!r} as {kind.__name__}") from None

        cols = [int_list(k) for k in ("p2fem_channels", "p2fem_kernels", "p2fem_strides", "p2fem_groups",
                                      "p2fem_paddings")]
        if len({len(c) for c in cols}) != 1:
            raise ConfigError("p2fem_* lists must all have the same length")
        layers = tuple(ConvLayer(*vals) for vals in zip(*cols))
        return cls(
            p2fem=P2femConfig(layers, scalar("input_channels", int)),
            sfam=SfamConfig(scalar("sfam_units", int), scalar("sfam_kernel", int), scalar("sfam_stride", int),
                            scalar("sfam_padding", int), scalar("regions", int)),
            fusion=FusionConfig(scalar("fusion_dim", int), merged["classifier"], int_list("dense_hidden")),
            bn_eps=scalar("bn_eps", float),
            bn_momentum=scalar("bn_momentum", float),
        )
