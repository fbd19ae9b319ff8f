"""Fusion network, encoders and discriminators."""

from flexkin.net.layers import channel_norm, collapse_views, conv1d, multiview_conv, view_attention
from flexkin.net.model import FUSION_MODES, FusionConfig, FlexModel, prepare_input

__all__ = [
    "FUSION_MODES", "FlexModel", "FusionConfig", "channel_norm", "collapse_views", "conv1d",
    "multiview_conv", "prepare_input", "view_attention",
]
