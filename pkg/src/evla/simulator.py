"""Synthetic scenes, events and degraded frames for desk-scale experiments.

A scene is a uniform (optionally ramped) background with one anti-aliased
rectangle moving at constant velocity.  Events come from the sharp, noiseless
frames through a log-intensity threshold-crossing model; blur and low light
are applied only to the frame branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evla import kernels
from evla.errors import (
    ExposureOutsideSequence,
    NonPositiveThreshold,
    ObjectOutOfBounds,
)
from evla.events import US_PER_S, EventStream, SensorGeometry, validate_stream

LOG_EPS = 1e-3
DEFAULT_CONTRAST = 0.2


@dataclass(frozen=True)
class FrameSequence:
    """Timed RGB frames; ``frames`` is (K, H, W, 3) float64 in [0, 1]."""

    times: np.ndarray
    frames: np.ndarray
    geometry: SensorGeometry

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[1:] != (self.geometry.height, self.geometry.width, 3):
            raise ValueError(f"frames must be (K, {self.geometry.height}, {self.geometry.width}, 3)")
        if times.shape != (frames.shape[0],):
            raise ValueError("need one timestamp per frame")
        if np.any(np.diff(times) <= 0):
            raise ValueError("frame timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return self.times.shape[0]

    def at(self, t_us: float) -> np.ndarray:
        """Linearly interpolated frame at ``t_us`` (must lie inside the sequence)."""
        times = self.times
        if t_us < times[0] or t_us > times[-1]:
            raise ExposureOutsideSequence(f"t={t_us} outside [{times[0]}, {times[-1]}]")
        k = int(np.searchsorted(times, t_us, side="right")) - 1
        if k >= len(times) - 1:
            return self.frames[-1].copy()
        a = (t_us - times[k]) / (times[k + 1] - times[k])
        return (1.0 - a) * self.frames[k] + a * self.frames[k + 1]


@dataclass(frozen=True)
class SceneConfig:
    width: int = 346
    height: int = 260
    bayer_origin: str = "RGGB"
    background: float = 0.5
    # background goes from background*(1-ramp) at the left edge to background at the right
    background_ramp: float = 0.0
    object_size: tuple[float, float] = (40.0, 40.0)        # (width, height) in pixels
    object_color: tuple[float, float, float] = (0.9, 0.9, 0.9)
    start: tuple[float, float] = (40.0, 110.0)             # top-left corner (x, y)
    velocity: tuple[float, float] = (60.0, 0.0)            # pixels per second
    duration_ms: float = 1000.0
    fps: float = 30.0

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height, self.bayer_origin)


@dataclass(frozen=True)
class DegradeConfig:
    exposure_ms: float = 10.0
    light_scale: float = 1.0
    black_level: float = 0.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.exposure_ms < 0:
            raise ValueError("exposure_ms must be non-negative")
        if not 0.0 <= self.light_scale <= 1.0:
            raise ValueError("light_scale must lie in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def frame_times(duration_ms: float, fps: float) -> np.ndarray:
    """Integer-microsecond capture times 0, 1/fps, ... up to ``duration_ms``."""
    n = int(np.floor(duration_ms * 1e-3 * fps + 1e-9)) + 1
    return np.round(np.arange(n) * (US_PER_S / fps)).astype(np.int64)


def object_position(config: SceneConfig, t_us) -> tuple:
    """Top-left corner of the object at ``t_us``; exactly linear in time."""
    t = np.asarray(t_us, dtype=np.float64) / US_PER_S
    return config.start[0] + config.velocity[0] * t, config.start[1] + config.velocity[1] * t


def _coverage(lo: float, size: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [i, i+1) covered by the interval [lo, lo+size)."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, lo + size) - np.maximum(edges, lo), 0.0, 1.0)


def render_frame(config: SceneConfig, t_us: float) -> np.ndarray:
    w, h = config.width, config.height
    bg_row = config.background * (1.0 - config.background_ramp * (1.0 - np.arange(w) / max(w - 1, 1)))
    bg = np.broadcast_to(bg_row[None, :, None], (h, w, 3))
    x0, y0 = object_position(config, t_us)
    cover = _coverage(float(y0), config.object_size[1], h)[:, None] * \
        _coverage(float(x0), config.object_size[0], w)[None, :]
    color = np.asarray(config.object_color, dtype=np.float64)
    return bg * (1.0 - cover[..., None]) + color * cover[..., None]


def synthetic_scene(config: SceneConfig) -> FrameSequence:
    times = frame_times(config.duration_ms, config.fps)
    ow, oh = config.object_size
    for t in (times[0], times[-1]):
        x0, y0 = object_position(config, t)
        if x0 < 0 or y0 < 0 or x0 + ow > config.width or y0 + oh > config.height:
            raise ObjectOutOfBounds(
                f"object at ({x0:.2f}, {y0:.2f}) size {ow}x{oh} leaves the "
                f"{config.width}x{config.height} frame at t={int(t)} us"
            )
    frames = np.stack([render_frame(config, t) for t in times])
    return FrameSequence(times, frames, config.geometry)


def luminance(frames: np.ndarray) -> np.ndarray:
    return frames.mean(axis=-1)


def log_intensity(frames: np.ndarray, eps: float = LOG_EPS) -> np.ndarray:
    return np.log(luminance(frames) + eps)


def generate_events(seq: FrameSequence, contrast_threshold: float = DEFAULT_CONTRAST,
                    eps: float = LOG_EPS) -> EventStream:
    """Threshold-crossing events from the log luminance of a frame sequence.

    Between frames the log signal of each pixel is linearly interpolated; an
    event is stamped at the first integer microsecond at which it reaches the
    next reference level, and the reference then moves to that level.
    Output is sorted by time, ties by pixel (row-major) then level order.
    """
    if contrast_threshold <= 0:
        raise NonPositiveThreshold(f"contrast threshold must be > 0, got {contrast_threshold}")
    if len(seq) < 2:
        raise ValueError("event generation needs at least two frames")
    g = seq.geometry
    logs = log_intensity(seq.frames, eps).reshape(len(seq), -1)
    pix, t, p = kernels.threshold_events(logs, seq.times, contrast_threshold)
    order = np.argsort(t, kind="stable")
    pix, t, p = pix[order], t[order], p[order]
    y, x = np.divmod(pix, g.width)
    return validate_stream((x, y, t, p), g)


def apply_exposure_blur(seq: FrameSequence, t_capture: int, exposure_ms: float) -> np.ndarray:
    """Mean of the linearly interpolated signal over [t_capture - exposure, t_capture]."""
    t_capture = float(t_capture)
    exposure_us = float(exposure_ms) * 1000.0
    a, b = t_capture - exposure_us, t_capture
    times = seq.times
    if a < times[0] or b > times[-1]:
        raise ExposureOutsideSequence(
            f"exposure window [{a:.0f}, {b:.0f}] us is outside [{times[0]}, {times[-1]}]"
        )
    if exposure_us == 0:
        return seq.at(b)
    acc = np.zeros(seq.frames.shape[1:], dtype=np.float64)
    k0 = max(int(np.searchsorted(times, a, side="right")) - 1, 0)
    for k in range(k0, len(times) - 1):
        if times[k] >= b:
            break
        u, v = max(a, times[k]), min(b, times[k + 1])
        if v <= u:
            continue
        # exact integral of the linear segment: width x mean of its endpoints
        acc += (v - u) * 0.5 * (seq.at(u) + seq.at(v))
    return acc / exposure_us


def quantize(frame: np.ndarray) -> np.ndarray:
    """[0, 255] reals to uint8, rounding half up."""
    return np.floor(np.clip(frame, 0.0, 255.0) + 0.5).astype(np.uint8)


def apply_low_light(frame: np.ndarray, config: DegradeConfig) -> np.ndarray:
    """Scale illumination, add sensor noise, quantise and clip the black floor."""
    rng = np.random.default_rng(config.seed)
    v = np.asarray(frame, dtype=np.float64) * config.light_scale * 255.0
    if config.noise_std > 0:
        v = v + rng.normal(0.0, config.noise_std, size=v.shape)
    out = quantize(v)
    out[out < config.black_level] = 0
    return out


def degrade(seq: FrameSequence, t_capture: int, config: DegradeConfig) -> np.ndarray:
    """Blur over the exposure, then low-light degradation: an 8-bit RGB frame."""
    return apply_low_light(apply_exposure_blur(seq, t_capture, config.exposure_ms), config)


def mean_gray(frame: np.ndarray) -> float:
    return float(np.asarray(frame, dtype=np.float64).mean())


def clipped_fraction(frame: np.ndarray) -> float:
    """Fraction of pixels whose channels are all at zero."""
    f = np.asarray(frame)
    return float(np.all(f == 0, axis=-1).mean())


def edge_energy(frame: np.ndarray) -> float:
    """Sum of squared horizontal and vertical differences of the gray image."""
    g = np.asarray(frame, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=-1)
    return float((np.diff(g, axis=0) ** 2).sum() + (np.diff(g, axis=1) ** 2).sum())


def dim_sequence(seq: FrameSequence, light_scale: float) -> FrameSequence:
    """Uniformly scale scene radiance; what the event pixel sees in dimmer light."""
    return FrameSequence(seq.times, seq.frames * light_scale, seq.geometry)
