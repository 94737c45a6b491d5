"""Dense, encoder-friendly representations of an event window.

All maps are plain numpy arrays in (row, column) order:

* count map       ``(H, W) int64``      events per pixel, polarity ignored
* sum map         ``(H, W) int64``      polarity-signed sum per pixel
* normalised map  ``(H, W) float64``    min-max scaled to [0, 1]
* event frame     ``(H, W, 3) float64`` demosaiced normalised count map
* time surface    ``(H, W) float64``    exp(-(t_e - t_last) / tau)
* voxel grid      ``(B, H, W) float64`` signed, bilinear in time
"""

from __future__ import annotations

import numpy as np

from evla import kernels
from evla.errors import GeometryMismatch, InvalidTau
from evla.events import SensorGeometry
from evla.storage.pixmap import to_gray8

DEFAULT_TAU_US = 30_000
DEFAULT_BINS = 5

# bilinear interpolation weights; R/B sites use the 3x3 tent, G sites the cross
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0
_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0


def _geometry(window, geometry: SensorGeometry | None) -> SensorGeometry:
    if geometry is None:
        return window.geometry
    return geometry


def accumulate_count(window, geometry: SensorGeometry | None = None) -> np.ndarray:
    g = _geometry(window, geometry)
    return kernels.count_accumulate(window.x, window.y, g.width, g.height)


def accumulate_sum(window, geometry: SensorGeometry | None = None) -> np.ndarray:
    g = _geometry(window, geometry)
    return kernels.sum_accumulate(window.x, window.y, window.p, g.width, g.height)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1].  A constant map (including the empty one) becomes all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return v.copy()
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def bayer_masks(geometry: SensorGeometry) -> np.ndarray:
    """Boolean (3, H, W) masks marking the R, G and B sites of the mosaic."""
    h, w = geometry.shape
    pattern = geometry.bayer_origin
    site = (np.arange(h)[:, None] % 2) * 2 + (np.arange(w)[None, :] % 2)
    colours = np.array(list(pattern))[site]
    return np.stack([colours == c for c in "RGB"])


def _conv3x3(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    h, w = a.shape
    padded = np.pad(a, 1)
    out = np.zeros_like(a)
    for dy in range(3):
        for dx in range(3):
            k = kernel[dy, dx]
            if k:
                out += k * padded[dy:dy + h, dx:dx + w]
    return out


def demosaic(mosaic: np.ndarray, geometry: SensorGeometry, clamp: bool = True) -> np.ndarray:
    """Bilinear demosaicing of a single-channel Bayer map into (H, W, 3).

    Missing colour samples are the weighted mean of same-colour sites in the
    3x3 neighbourhood.  Weights are renormalised over the sites that exist, so
    image borders need no padding convention and constant maps stay constant.
    """
    m = np.asarray(mosaic, dtype=np.float64)
    if m.shape != geometry.shape:
        raise GeometryMismatch(f"map shape {m.shape} does not match sensor {geometry.shape}")
    masks = bayer_masks(geometry)
    out = np.empty(m.shape + (3,), dtype=np.float64)
    for c, kernel in enumerate((_KERNEL_RB, _KERNEL_G, _KERNEL_RB)):
        mask = masks[c].astype(np.float64)
        num = _conv3x3(m * mask, kernel)
        den = _conv3x3(mask, kernel)
        out[..., c] = np.where(masks[c], m, num / den)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def event_frame(window, geometry: SensorGeometry | None = None) -> np.ndarray:
    """Count map -> min-max normalisation -> demosaic: the three-channel event frame."""
    g = _geometry(window, geometry)
    return demosaic(minmax_normalize(accumulate_count(window, g)), g)


def time_surface(window, t_e: int | None = None, tau: float = DEFAULT_TAU_US,
                 geometry: SensorGeometry | None = None) -> np.ndarray:
    if tau <= 0:
        raise InvalidTau(f"tau must be positive, got {tau}")
    g = _geometry(window, geometry)
    if t_e is None:
        t_e = window.t_query
    last = kernels.latest_index(window.x, window.y, g.width, g.height)
    hit = last >= 0
    out = np.zeros(g.width * g.height, dtype=np.float64)
    if hit.any():
        t_last = window.t[last[hit]].astype(np.int64)
        age = int(t_e) - t_last
        if age.min() < 0:
            raise ValueError("window holds events later than t_e")
        out[hit] = np.exp(-age / float(tau))
    return out.reshape(g.height, g.width)


def voxel_grid(window, bins: int = DEFAULT_BINS,
               geometry: SensorGeometry | None = None) -> np.ndarray:
    """Polarity-signed events spread linearly over the two nearest time bins.

    Event times are mapped onto [0, bins - 1] using the first and last event of
    the window; a window with zero time span puts everything in bin 0.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    g = _geometry(window, geometry)
    t = window.t
    if t.shape[0] == 0:
        return np.zeros((bins, g.height, g.width), dtype=np.float64)
    t0 = int(t[0])
    span = int(t[-1]) - t0
    rel = (t.astype(np.int64) - t0).astype(np.float64)
    if span == 0:
        tnorm = np.zeros_like(rel)
    else:
        tnorm = (bins - 1) * rel / span
    return kernels.voxel_scatter(window.x, window.y, window.p, tnorm, bins, g.width, g.height)


REPRESENTATIONS = ("count", "sum", "timesurface", "voxel", "frame")


def render_window(window, kind: str = "count", tau: float = DEFAULT_TAU_US,
                  bins: int = DEFAULT_BINS) -> list[tuple[str, np.ndarray]]:
    """8-bit images for one window: ``[(suffix, array), ...]``.

    ``count`` and ``sum`` are min-max normalised, ``voxel`` is normalised over
    the whole grid and yields one gray image per bin, ``frame`` is the
    demosaiced event frame as RGB.  Quantisation is round(v * 255).
    """
    if kind == "count":
        return [("count", to_gray8(minmax_normalize(accumulate_count(window))))]
    if kind == "sum":
        return [("sum", to_gray8(minmax_normalize(accumulate_sum(window))))]
    if kind == "timesurface":
        return [("timesurface", to_gray8(time_surface(window, tau=tau)))]
    if kind == "voxel":
        grid = minmax_normalize(voxel_grid(window, bins))
        return [(f"voxel{b}", to_gray8(grid[b])) for b in range(grid.shape[0])]
    if kind == "frame":
        return [("frame", to_gray8(event_frame(window)))]
    raise ValueError(f"unknown representation {kind!r}; choose from {REPRESENTATIONS}")
