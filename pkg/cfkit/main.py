"""Main entry points for cfkit - build, run and decode the model."""

import logging
from typing import List, Literal, Optional, Tuple, Union

import numpy as np

from cfkit.blocks.base import ParamStore
from cfkit.blocks.model import ContextFormer
from cfkit.blocks.tpem import FeaturePyramid
from cfkit.exceptions import ConfigurationError
from cfkit.gme import GmeStack
from cfkit.tensor import ops
from cfkit.types import ModelConfig

logger = logging.getLogger(__name__)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Tuple[ContextFormer, ParamStore]:
    """
    Build the graph described by ``config`` and initialize its parameters.

    Args:
        config: Validated model config
        seed: Seed for the Kaiming-uniform initialization
        dtype: Parameter dtype (float32 for inference, float64 for gradient checks)

    Returns:
        (model, params) with params in graph construction order
    """
    model = ContextFormer(config)
    params = model.init_params(seed, dtype)
    logger.info("built %s: %d parameters in %d tensors", config.name, params.numel(), len(params))
    return model, params


def _block(model: ContextFormer, index: int):
    if model.trans_bdc is None or not 0 <= index < len(model.trans_bdc.layers):
        raise ConfigurationError(f"model has no Trans-BDC block {index}", field="trans_bdc.num_blocks")
    return model.trans_bdc.layers[index]


def tpem_forward(model: ContextFormer, params: ParamStore, x: np.ndarray) -> FeaturePyramid:
    """Stem + TPEM: pyramid taps and pooled tokens x_f."""
    if model.tpem is None:
        raise ConfigurationError("config has no TPEM stages", field="tpem_stages")
    model.check_input(x)
    s = model.stem.forward(x.astype(params.dtype, copy=False), params)
    return model.tpem.forward(s, params, input_hw=x.shape[2:])


def bdc_forward(model: ContextFormer, params: ParamStore, x_f: np.ndarray, block: int = 0) -> np.ndarray:
    layer = _block(model, block).bdc
    if layer is None:
        raise ConfigurationError("BDC branch is disabled in this config", field="trans_bdc")
    return layer.forward(x_f, params)


def attention_forward(model: ContextFormer, params: ParamStore, x_f: np.ndarray, block: int = 0) -> np.ndarray:
    layer = _block(model, block).attn
    if layer is None:
        raise ConfigurationError("attention branch is disabled in this config", field="trans_bdc.use_attention")
    return layer.forward(x_f, params)


def trans_bdc_forward(model: ContextFormer, params: ParamStore, x_f: np.ndarray) -> np.ndarray:
    """All Trans-BDC blocks in sequence; shape is preserved."""
    if model.trans_bdc is None:
        raise ConfigurationError("config has no bottleneck", field="tpem_stages")
    return model.trans_bdc.forward(x_f, params)


def fmm_forward(
    model: ContextFormer, params: ParamStore, pyramid: FeaturePyramid, bottleneck: np.ndarray
) -> List[np.ndarray]:
    """Merged features at every scale, coarse to fine."""
    if model.fmm is None:
        raise ConfigurationError("feature merging only exists in segmentation configs", field="head")
    return model.fmm.forward(model.local_inputs(pyramid), bottleneck, params)


def seg_head_forward(model: ContextFormer, params: ParamStore, merged: List[np.ndarray]) -> np.ndarray:
    if model.seg_head is None:
        raise ConfigurationError("config has no segmentation head", field="head")
    return model.seg_head.forward(merged, params)


def cls_head_forward(model: ContextFormer, params: ParamStore, bottleneck: np.ndarray) -> np.ndarray:
    if model.cls_head is None:
        raise ConfigurationError("config has no classification head", field="head")
    return model.cls_head.forward(bottleneck, params)


def full_forward(
    model: ContextFormer,
    params: ParamStore,
    inputs: Union[GmeStack, np.ndarray],
    mode: Optional[Literal["seg", "cls"]] = None,
) -> np.ndarray:
    """
    Run the whole network.

    Args:
        model: Built model
        params: Parameters matching the model
        inputs: A GME stack or a raw NCHW array
        mode: Expected head; must match the config when given

    Returns:
        Segmentation logits (N, classes, H/8, W/8) or class scores (N, classes)
    """
    if mode is not None and mode != model.config.head:
        raise ConfigurationError(f"mode '{mode}' does not match config head '{model.config.head}'", field="head")
    x = inputs.tensor if isinstance(inputs, GmeStack) else inputs
    return model.forward(x, params)


def logits_to_mask(logits: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly upsample logits and take the per-pixel argmax (lowest index wins ties)."""
    up = ops.upsample_bilinear(logits, out_h, out_w)
    return np.argmax(up, axis=1).astype(np.int32)
