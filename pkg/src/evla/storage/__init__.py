"""Bit-exact persistence: event files, pixmaps, parameter containers, manifests."""

from evla.storage.events_file import read_events, write_events
from evla.storage.manifest import (
    ActionRecord,
    EpisodeManifest,
    FrameRecord,
    read_manifest,
    write_manifest,
)
from evla.storage.params_file import read_params, write_params
from evla.storage.pixmap import read_image, to_gray8, write_image, write_map

__all__ = [
    "ActionRecord", "EpisodeManifest", "FrameRecord", "read_events", "read_image",
    "read_manifest", "read_params", "to_gray8", "write_events", "write_image",
    "write_manifest", "write_map", "write_params",
]
