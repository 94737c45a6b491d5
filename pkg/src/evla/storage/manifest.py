"""Episode manifests: one JSON object per line, one line per episode.

Paths inside a manifest are relative to the manifest's directory unless
absolute.  Fields this module does not know about are kept in ``extra`` and
written back unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from evla.errors import EvlaError, MalformedRecord, NonMonotoneFrames
from evla.events import SensorGeometry

ACTION_DOF = 6


@dataclass
class FrameRecord:
    t_exposure_end_us: int
    image_path: str
    exposure_ms: float
    light_scale: float
    extra: dict = field(default_factory=dict)

    _KEYS = ("t_exposure_end_us", "image_path", "exposure_ms", "light_scale")

    def to_json(self) -> dict:
        return {**self.extra, "t_exposure_end_us": self.t_exposure_end_us,
                "image_path": self.image_path, "exposure_ms": self.exposure_ms,
                "light_scale": self.light_scale}

    @classmethod
    def from_json(cls, d: dict) -> "FrameRecord":
        t = d["t_exposure_end_us"]
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise ValueError(f"t_exposure_end_us must be a non-negative integer, got {t!r}")
        return cls(t, str(d["image_path"]), float(d["exposure_ms"]), float(d["light_scale"]),
                   {k: v for k, v in d.items() if k not in cls._KEYS})


@dataclass
class ActionRecord:
    t_us: int
    joint_positions: tuple[float, ...]
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {**self.extra, "t_us": self.t_us, "joint_positions": list(self.joint_positions)}

    @classmethod
    def from_json(cls, d: dict) -> "ActionRecord":
        joints = tuple(float(v) for v in d["joint_positions"])
        if len(joints) != ACTION_DOF:
            raise ValueError(f"joint_positions needs {ACTION_DOF} values, got {len(joints)}")
        return cls(int(d["t_us"]), joints,
                   {k: v for k, v in d.items() if k not in ("t_us", "joint_positions")})


@dataclass
class EpisodeManifest:
    episode_id: str
    geometry: SensorGeometry
    frames: list[FrameRecord]
    events_path: str
    actions: list[ActionRecord] | None = None
    action_units: str | None = None
    extra: dict = field(default_factory=dict)

    _KEYS = ("episode_id", "geometry", "frames", "events_path", "actions", "action_units")

    def __post_init__(self):
        check_monotone(self.frames)

    def to_json(self) -> dict:
        g = self.geometry
        d = {**self.extra,
             "episode_id": self.episode_id,
             "geometry": {"width": g.width, "height": g.height, "bayer_origin": g.bayer_origin},
             "frames": [f.to_json() for f in self.frames],
             "events_path": self.events_path}
        if self.actions is not None:
            d["actions"] = [a.to_json() for a in self.actions]
        if self.action_units is not None:
            d["action_units"] = self.action_units
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EpisodeManifest":
        g = d["geometry"]
        actions = d.get("actions")
        return cls(
            episode_id=str(d["episode_id"]),
            geometry=SensorGeometry(int(g["width"]), int(g["height"]),
                                    g.get("bayer_origin", "RGGB")),
            frames=[FrameRecord.from_json(f) for f in d["frames"]],
            events_path=str(d["events_path"]),
            actions=None if actions is None else [ActionRecord.from_json(a) for a in actions],
            action_units=d.get("action_units"),
            extra={k: v for k, v in d.items() if k not in cls._KEYS},
        )

    def referenced_paths(self) -> list[str]:
        return [self.events_path] + [f.image_path for f in self.frames]


def check_monotone(frames: list[FrameRecord]) -> None:
    for i in range(1, len(frames)):
        if frames[i].t_exposure_end_us <= frames[i - 1].t_exposure_end_us:
            raise NonMonotoneFrames(
                f"frame {i} at {frames[i].t_exposure_end_us} us does not follow "
                f"{frames[i - 1].t_exposure_end_us} us"
            )


def resolve(manifest_path, relative: str) -> Path:
    p = Path(relative)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def write_manifest(path, manifests) -> None:
    if isinstance(manifests, EpisodeManifest):
        manifests = [manifests]
    with open(path, "w", encoding="utf-8") as fh:
        for m in manifests:
            check_monotone(m.frames)
            fh.write(json.dumps(m.to_json(), sort_keys=True) + "\n")


def append_manifest(path, manifest: EpisodeManifest) -> None:
    check_monotone(manifest.frames)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.to_json(), sort_keys=True) + "\n")


def read_manifest(path, check_files: bool = True) -> list[EpisodeManifest]:
    """Parse every episode; with ``check_files`` every referenced file must exist."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not a JSON object")
                m = EpisodeManifest.from_json(record)
            except NonMonotoneFrames:
                raise
            except (ValueError, KeyError, TypeError, EvlaError) as exc:
                raise MalformedRecord(lineno, str(exc)) from exc
            if check_files:
                for rel in m.referenced_paths():
                    if not resolve(path, rel).exists():
                        raise MalformedRecord(lineno, f"referenced file {rel!r} does not exist")
            out.append(m)
    return out
