"""Parameter and FLOP accounting for the event adapter.

Only what the adapter adds on top of the image branch is counted.  The patch
embedding is shared, so its weights count as zero additional parameters, but
applying it to the event frame is extra compute and is included in the FLOPs.

FLOPs are 2 x multiply-accumulates of the matrix products (linear layers and
the two attention products); normalisation, softmax and activations are
ignored.
"""

from __future__ import annotations

import numpy as np

from evla.fusion.adapter import AdapterConfig, is_additional, param_shapes, token_grid_shape

REFERENCE_PARAMS = 13.31e6
REFERENCE_FLOPS = 20.4e9
REFERENCE_RESOLUTION = (260, 346)


def count_parameters(config: AdapterConfig) -> int:
    return sum(int(np.prod(shape)) for name, shape in param_shapes(config).items()
               if is_additional(name))


def parameter_breakdown(config: AdapterConfig) -> dict[str, int]:
    """Additional parameters grouped by component."""
    groups: dict[str, int] = {}
    for name, shape in param_shapes(config).items():
        if not is_additional(name):
            continue
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "event" else "fusion"
        if parts[0] == "event" and parts[1] in ("blocks", "proj"):
            key = f"event.{parts[1]}"
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    return groups


def _block_macs(config: AdapterConfig, dim: int, tokens: int) -> int:
    if config.block_type == "linear":
        return tokens * dim * dim
    hidden = config.hidden(dim)
    linear = tokens * (dim * 3 * dim + dim * dim + 2 * dim * hidden)
    attention = 2 * tokens * tokens * dim
    return linear + attention


def flops_estimate(config: AdapterConfig, resolution=REFERENCE_RESOLUTION) -> float:
    """Additional FLOPs for one frame at ``resolution`` = (height, width).

    The frame is zero-padded to a multiple of the patch size first, so
    260 x 346 at patch 16 becomes a 17 x 22 token grid.
    """
    if not config.stages:
        return 0.0
    gh, gw = token_grid_shape(config, resolution)
    n = gh * gw
    D, d, p = config.image_dim, config.event_dim, config.patch_size
    macs = n * p * p * config.in_channels * D      # shared embedding on the event frame
    macs += n * D * d                               # down-projection into the event branch
    macs += config.stages * _block_macs(config, d, n)
    macs += config.stages * n * d * D               # per-stage projection back to image_dim
    macs += config.stages * n * (2 * D * config.fusion_hidden + config.fusion_hidden * D)
    return 2.0 * macs


def describe_wiring(config: AdapterConfig) -> str:
    fuse = "one fusion MLP shared by all stages" if config.shared_fusion else \
        "an independent fusion MLP per stage"
    return (
        f"shared {config.patch_size}x{config.patch_size} patch embedding -> "
        f"linear {config.image_dim}->{config.event_dim} into {config.event_blocks} "
        f"{config.block_type} event blocks; after image layers {list(config.fusion_layers)} "
        f"each event block output is projected {config.event_dim}->{config.image_dim}, "
        f"concatenated with the image tokens and passed through {fuse} "
        f"({2 * config.image_dim}->{config.fusion_hidden}->{config.image_dim}, "
        f"{config.fusion_activation})"
    )
