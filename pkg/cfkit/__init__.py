"""cfkit - ContextFormer segmentation kit."""

__version__ = "0.1.0"

from cfkit.analysis import bench_latency, count_macs, count_params, emit_report, profile
from cfkit.config import (
    ablation_configs,
    classification_config,
    load_config,
    micro_config,
    seg_512_config,
)
from cfkit.exceptions import (
    CfkitException,
    ConfigurationError,
    IngestionError,
    NumericError,
    UsageError,
    WeightMismatchError,
)
from cfkit.gme import build_gme_stack, load_image
from cfkit.main import (
    attention_forward,
    bdc_forward,
    build_model,
    cls_head_forward,
    fmm_forward,
    full_forward,
    logits_to_mask,
    seg_head_forward,
    tpem_forward,
    trans_bdc_forward,
)
from cfkit.types import CostReport, ModelConfig
from cfkit.weights import load_weights, save_weights

__all__ = [
    # Main API
    "build_model",
    "tpem_forward",
    "bdc_forward",
    "attention_forward",
    "trans_bdc_forward",
    "fmm_forward",
    "seg_head_forward",
    "cls_head_forward",
    "full_forward",
    "logits_to_mask",
    # Images
    "load_image",
    "build_gme_stack",
    # Analysis
    "count_params",
    "count_macs",
    "bench_latency",
    "profile",
    "emit_report",
    # Config
    "ModelConfig",
    "CostReport",
    "load_config",
    "seg_512_config",
    "classification_config",
    "micro_config",
    "ablation_configs",
    # Weights
    "save_weights",
    "load_weights",
    # Exceptions
    "CfkitException",
    "ConfigurationError",
    "NumericError",
    "IngestionError",
    "UsageError",
    "WeightMismatchError",
]
