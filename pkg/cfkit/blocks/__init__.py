"""Network blocks and the assembled model."""

from cfkit.blocks.attention import LightweightAttention, attention_core
from cfkit.blocks.base import Layer, Module, ParamStore, Sequential, Tape
from cfkit.blocks.bdc import BranchedDepthwise, ChannelAttention
from cfkit.blocks.ffn import FeedForward, TransBDCBlock
from cfkit.blocks.fmm import FeatureMerge
from cfkit.blocks.heads import ClsHead, SegHead
from cfkit.blocks.layers import ConvBN, Linear
from cfkit.blocks.model import MODULES, ContextFormer, ForwardResult
from cfkit.blocks.tpem import FeaturePyramid, InvertedResidual, TokenPyramid

__all__ = [
    "MODULES",
    "BranchedDepthwise",
    "ChannelAttention",
    "ClsHead",
    "ContextFormer",
    "ConvBN",
    "FeatureMerge",
    "FeaturePyramid",
    "FeedForward",
    "ForwardResult",
    "InvertedResidual",
    "Layer",
    "LightweightAttention",
    "Linear",
    "Module",
    "ParamStore",
    "SegHead",
    "Sequential",
    "Tape",
    "TokenPyramid",
    "TransBDCBlock",
    "attention_core",
]
