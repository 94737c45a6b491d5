"""Event/image fusion: pixel overlay and the hierarchical event adapter."""

from evla.fusion.accounting import count_parameters, flops_estimate
from evla.fusion.adapter import (
    AdapterConfig,
    AdapterParams,
    adapter_forward,
    image_dropout,
    init_params,
    patch_embed_shared,
)
from evla.fusion.gradcheck import gradient_check
from evla.fusion.overlay import PolarityColorMap, overlay

__all__ = [
    "AdapterConfig", "AdapterParams", "PolarityColorMap", "adapter_forward", "count_parameters",
    "flops_estimate", "gradient_check", "image_dropout", "init_params", "overlay",
    "patch_embed_shared",
]
