"""Declarative types for cfkit: specs, configs and reports."""

from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from cfkit.exceptions import ConfigurationError

CONFIG_SCHEMA = "cfkit_config_v1"
REPORT_SCHEMA = "cfkit_report_v1"


class ConvSpec(BaseModel):
    """Convolution geometry. Depthwise convs use a channel multiplier of 1."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["pointwise", "depthwise", "dense"]
    kernel: Tuple[PositiveInt, PositiveInt]
    stride: PositiveInt = 1
    padding: int = Field(default=0, ge=0)
    in_channels: PositiveInt
    out_channels: PositiveInt

    @model_validator(mode="after")
    def _check_kind(self) -> "ConvSpec":
        if self.kind == "depthwise" and self.out_channels != self.in_channels:
            raise ConfigurationError(
                f"depthwise conv needs out_channels == in_channels, got {self.in_channels}->{self.out_channels}",
                field="out_channels",
            )
        if self.kind == "pointwise" and self.kernel != (1, 1):
            raise ConfigurationError(f"pointwise conv needs a 1x1 kernel, got {self.kernel}", field="kernel")
        return self

    @classmethod
    def dense(cls, in_channels: int, out_channels: int, k: int, stride: int = 1) -> "ConvSpec":
        return cls(kind="dense", kernel=(k, k), stride=stride, padding=k // 2,
                   in_channels=in_channels, out_channels=out_channels)

    @classmethod
    def depthwise(cls, channels: int, k: int, stride: int = 1) -> "ConvSpec":
        return cls(kind="depthwise", kernel=(k, k), stride=stride, padding=k // 2,
                   in_channels=channels, out_channels=channels)

    @classmethod
    def pointwise(cls, in_channels: int, out_channels: int) -> "ConvSpec":
        return cls(kind="pointwise", kernel=(1, 1), in_channels=in_channels, out_channels=out_channels)

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        per_group = 1 if self.kind == "depthwise" else self.in_channels
        return (self.out_channels, per_group, self.kernel[0], self.kernel[1])

    @property
    def in_per_group(self) -> int:
        return 1 if self.kind == "depthwise" else self.in_channels

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        """Floor rule: (H + 2*pad - k) // stride + 1."""
        oh = (h + 2 * self.padding - self.kernel[0]) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel[1]) // self.stride + 1
        if oh <= 0 or ow <= 0:
            raise ConfigurationError(f"conv {self.kernel} stride {self.stride} collapses {h}x{w}", field="kernel")
        return oh, ow


class BatchNormParams(BaseModel):
    """Per-channel inference-mode batch normalization parameters."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = Field(default=1e-5, ge=0.0)

    @model_validator(mode="after")
    def _check_stats(self) -> "BatchNormParams":
        shapes = {a.shape for a in (self.gamma, self.beta, self.mean, self.var)}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ConfigurationError("batchnorm parameters must be 1-D with equal length", field="gamma")
        if np.any(self.var < 0):
            raise ConfigurationError("running variance must be non-negative", field="var")
        if np.any(self.var + self.eps <= 0):
            raise ConfigurationError("running variance + eps must be positive", field="eps")
        return self

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])

    @classmethod
    def identity(cls, channels: int, dtype: Any = np.float32, eps: float = 1e-5) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            mean=np.zeros(channels, dtype=dtype),
            var=np.ones(channels, dtype=dtype),
            eps=eps,
        )


class ParamSpec(BaseModel):
    """Name, shape and initializer of one trainable tensor."""

    model_config = ConfigDict(frozen=True)

    name: str
    shape: Tuple[int, ...]
    init: Literal["kaiming", "ones", "zeros"] = "kaiming"
    fan_in: int = 1

    @property
    def numel(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def module(self) -> str:
        return self.name.split(".", 1)[0]


class InvertedResidualSpec(BaseModel):
    """One MobileNetV2 block: expand 1x1 -> depthwise kxk -> project 1x1."""

    model_config = ConfigDict(frozen=True)

    kernel: Literal[3, 5]
    expand_ratio: Literal[1, 3, 4, 6]
    out_channels: PositiveInt
    stride: Literal[1, 2]

    def has_residual(self, in_channels: int) -> bool:
        return self.stride == 1 and in_channels == self.out_channels


class StemSpec(BaseModel):
    """Stem convolution."""

    model_config = ConfigDict(frozen=True)

    kernel: PositiveInt = 3
    out_channels: PositiveInt = 16
    stride: PositiveInt = 2


class TransBDCSpec(BaseModel):
    """Bottleneck hyperparameters plus the component switches used by ablations."""

    model_config = ConfigDict(frozen=True)

    num_blocks: int = Field(default=4, ge=0)
    num_heads: PositiveInt = 4
    q_dim: PositiveInt = 16
    k_dim: PositiveInt = 16
    v_dim: PositiveInt = 32
    ffn_expansion: PositiveInt = 2
    ca_reduction: PositiveInt = 4
    use_attention: bool = True
    use_dw3: bool = True
    use_dw1: bool = True
    use_dwsep: bool = True
    use_channel_attention: bool = True

    @model_validator(mode="after")
    def _check_dims(self) -> "TransBDCSpec":
        if self.q_dim != self.k_dim:
            raise ConfigurationError(f"q_dim ({self.q_dim}) must equal k_dim ({self.k_dim})", field="trans_bdc.q_dim")
        return self

    @property
    def use_bdc(self) -> bool:
        return self.use_dw3 or self.use_dw1 or self.use_dwsep or self.use_channel_attention


class AttentionSpec(BaseModel):
    """Per-head projection widths of the lightweight attention branch."""

    model_config = ConfigDict(frozen=True)

    dim: PositiveInt = 208
    num_heads: PositiveInt = 4
    q_dim: PositiveInt = 16
    k_dim: PositiveInt = 16
    v_dim: PositiveInt = 32

    @model_validator(mode="after")
    def _check_dims(self) -> "AttentionSpec":
        if self.q_dim != self.k_dim:
            raise ConfigurationError("query and key widths must match", field="q_dim")
        return self

    @property
    def scale(self) -> float:
        return float(self.k_dim) ** -0.5


def _default_stages() -> List[List[InvertedResidualSpec]]:
    rows = [
        [(3, 4, 16, 2), (3, 3, 16, 1)],
        [(5, 3, 32, 2), (5, 3, 32, 1)],
        [(3, 3, 64, 2), (3, 3, 64, 1)],
        [(5, 6, 96, 2), (5, 6, 96, 1)],
    ]
    return [
        [InvertedResidualSpec(kernel=k, expand_ratio=e, out_channels=c, stride=s) for k, e, c, s in stage]
        for stage in rows
    ]


def _default_stem_blocks() -> List[InvertedResidualSpec]:
    return [InvertedResidualSpec(kernel=3, expand_ratio=1, out_channels=16, stride=1)]


class ModelConfig(BaseModel):
    """Declarative description of the whole network."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal["cfkit_config_v1"] = CONFIG_SCHEMA
    name: str = "contextformer"
    input_channels: Literal[3, 5] = 5
    num_classes: PositiveInt = 150
    input_h: PositiveInt = 512
    input_w: PositiveInt = 512
    head: Literal["seg", "cls", "none"] = "seg"
    stem: StemSpec = Field(default_factory=StemSpec)
    stem_blocks: List[InvertedResidualSpec] = Field(default_factory=_default_stem_blocks)
    tpem_stages: List[List[InvertedResidualSpec]] = Field(default_factory=_default_stages)
    pool_divisor: PositiveInt = 64
    trans_bdc: TransBDCSpec = Field(default_factory=TransBDCSpec)
    embed_dim: Optional[PositiveInt] = None
    fmm_target_channels: PositiveInt = 160
    edge_threshold: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _check_schedule(self) -> "ModelConfig":
        for i, stage in enumerate(self.tpem_stages):
            if not stage:
                raise ConfigurationError(f"stage {i + 1} has no blocks", field=f"tpem_stages[{i}]")
        if self.embed_dim is not None and self.tpem_stages and self.embed_dim != sum(self.tap_channels):
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} != sum of pyramid tap channels {sum(self.tap_channels)}",
                field="embed_dim",
            )
        if (self.head != "none" or self.trans_bdc.num_blocks > 0) and not self.tpem_stages:
            raise ConfigurationError("bottleneck and heads need at least one TPEM stage", field="tpem_stages")

        stride = self.encoder_stride
        for field in ("input_h", "input_w"):
            side = getattr(self, field)
            if side % stride:
                raise ConfigurationError(f"{field}={side} is not a multiple of the encoder stride {stride}", field=field)
            if not self.tpem_stages:
                continue
            if self.pool_divisor % max(self.tap_strides):
                raise ConfigurationError(
                    f"pool_divisor {self.pool_divisor} is not a multiple of the coarsest tap stride {max(self.tap_strides)}",
                    field="pool_divisor",
                )
            if self.head == "cls":
                if side < 64 or side // self.pool_divisor < 1:
                    raise ConfigurationError(f"{field}={side} too small for classification", field=field)
            elif side % self.pool_divisor:
                raise ConfigurationError(
                    f"{field}={side} is not a multiple of pool_divisor {self.pool_divisor}", field=field
                )
        return self

    @property
    def gme(self) -> bool:
        return self.input_channels == 5

    @property
    def tap_channels(self) -> List[int]:
        return [stage[-1].out_channels for stage in self.tpem_stages]

    @property
    def tap_strides(self) -> List[int]:
        stride = self.stem.stride
        for block in self.stem_blocks:
            stride *= block.stride
        strides = []
        for stage in self.tpem_stages:
            for block in stage:
                stride *= block.stride
            strides.append(stride)
        return strides

    @property
    def encoder_stride(self) -> int:
        if self.tpem_stages:
            return self.tap_strides[-1]
        stride = self.stem.stride
        for block in self.stem_blocks:
            stride *= block.stride
        return stride

    @property
    def width(self) -> int:
        """Channel width of the pooled bottleneck tokens."""
        return sum(self.tap_channels)

    def token_hw(self, h: Optional[int] = None, w: Optional[int] = None) -> Tuple[int, int]:
        h = self.input_h if h is None else h
        w = self.input_w if w is None else w
        return h // self.pool_divisor, w // self.pool_divisor

    def attention_spec(self) -> AttentionSpec:
        t = self.trans_bdc
        return AttentionSpec(dim=self.width, num_heads=t.num_heads, q_dim=t.q_dim, k_dim=t.k_dim, v_dim=t.v_dim)

    def with_updates(self, **updates: Any) -> "ModelConfig":
        """Copy with field overrides, re-running every validator."""
        data = self.model_dump()
        data.update(updates)
        return ModelConfig.model_validate(data)


class NodeCost(BaseModel):
    """Static cost of one graph node."""

    name: str
    kind: str
    params: int = 0
    macs: int = 0
    minor_ops: int = 0
    act_bytes: int = 0
    output_shape: List[int] = Field(default_factory=list)

    @property
    def module(self) -> str:
        return self.name.split(".", 1)[0]


class Rollup(BaseModel):
    """Summed costs over a module or the whole model."""

    name: str
    params: int = 0
    macs: int = 0
    minor_ops: int = 0
    act_bytes: int = 0


class LatencyRecord(BaseModel):
    """Wall-clock forward latency measurement."""

    warmup_iters: int
    measure_iters: int
    median_ms: float
    p90_ms: float
    input_shape: List[int]
    thread_count: int
    samples_ms: List[float] = Field(default_factory=list)
    output_digest: str = ""


class CostReport(BaseModel):
    """Parameters, MACs, activation memory and latency of one configuration."""

    schema_version: Literal["cfkit_report_v1"] = REPORT_SCHEMA
    config_name: str = ""
    input_shape: List[int] = Field(default_factory=list)
    nodes: List[NodeCost] = Field(default_factory=list)
    rollups: List[Rollup] = Field(default_factory=list)
    total: Rollup = Field(default_factory=lambda: Rollup(name="total"))
    gflops: float = 0.0
    gflops_2x: float = 0.0
    excluded: List[NodeCost] = Field(default_factory=list)
    latency: Optional[LatencyRecord] = None


class CoordResult(BaseModel):
    """One finite-difference coordinate check."""

    name: str
    index: List[int]
    analytic: float
    numeric: float
    rel_error: float
    abs_error: float = 0.0
    step: float = 0.0
    passed: bool = True


class GradCheckCase(BaseModel):
    """What to gradient-check and how."""

    model_config = ConfigDict(frozen=True)

    config: ModelConfig
    param_filter: List[str] = Field(default_factory=lambda: ["*"])
    exclude: List[str] = Field(default_factory=list)
    h: float = Field(default=1e-5, gt=0.0)
    tolerance: float = Field(default=1e-4, gt=0.0)
    denominator_floor: float = Field(default=1e-8, gt=0.0)
    # finite-difference roundoff; scaled by h / step when a smaller step is used
    atol: float = Field(default=1e-7, gt=0.0)
    kink_retries: int = Field(default=2, ge=0)
    max_coords: PositiveInt = 32
    seed: int = 0


class GradCheckReport(BaseModel):
    """Outcome of a gradient check."""

    passed: bool
    seed: int
    checked: int = 0
    skipped_kinks: int = 0
    coverage: Dict[str, int] = Field(default_factory=dict)
    undersampled: Dict[str, int] = Field(default_factory=dict)
    excluded: List[str] = Field(default_factory=list)
    worst: Optional[CoordResult] = None
    numeric_error: Optional[str] = None


class OracleCase(BaseModel):
    """Seeded comparison of an optimized operator against its naive reference."""

    model_config = ConfigDict(frozen=True)

    op: str
    seed: int = 0
    trials: PositiveInt = 100
    tolerance: float = Field(default=1e-6, gt=0.0)
    dtype: Literal["float32", "float64"] = "float32"
    # gaussian trials exercise rounding; dyadic trials are exact in float32
    values: Literal["gaussian", "dyadic"] = "gaussian"


class OracleResult(BaseModel):
    """Worst disagreement found for one operator."""

    op: str
    values: str = "gaussian"
    trials: int
    worst_diff: float
    worst_seed: int
    worst_shape: List[int] = Field(default_factory=list)
    passed: bool


class OracleReport(BaseModel):
    """Aggregated oracle sweep."""

    passed: bool
    results: List[OracleResult] = Field(default_factory=list)


class CheckResult(BaseModel):
    """One invariant assertion."""

    name: str
    passed: bool
    detail: str = ""


class SuiteReport(BaseModel):
    """Result of an invariant suite run."""

    suite: str
    seed: int
    passed: bool
    checks: List[CheckResult] = Field(default_factory=list)


class AblationEntry(BaseModel):
    """One row of the component ablation: switches plus static costs."""

    label: str
    vit: bool
    dw3: bool
    dw1: bool
    dwsep: bool
    channel_attention: bool
    gme: bool
    params: int
    gflops: float
