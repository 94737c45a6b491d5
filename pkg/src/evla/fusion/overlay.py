"""Parameter-free fusion: paint window events onto the RGB frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evla import kernels
from evla.errors import GeometryMismatch


@dataclass(frozen=True)
class PolarityColorMap:
    on_color: tuple[int, int, int] = (255, 0, 0)
    off_color: tuple[int, int, int] = (0, 0, 255)

    def __post_init__(self):
        for name in ("on_color", "off_color"):
            c = tuple(int(v) for v in getattr(self, name))
            if len(c) != 3 or not all(0 <= v <= 255 for v in c):
                raise ValueError(f"{name} must be three values in 0..255, got {c}")
            object.__setattr__(self, name, c)
        if self.on_color == self.off_color:
            raise ValueError("on_color and off_color must differ")

    def lookup(self, polarity) -> np.ndarray:
        """(n, 3) uint8 colours for an array of polarities."""
        table = np.array([self.off_color, self.on_color], dtype=np.uint8)
        return table[(np.asarray(polarity) > 0).astype(np.intp)]


def overlay(image: np.ndarray, window, colors: PolarityColorMap | None = None) -> np.ndarray:
    """Return a copy of ``image`` where every pixel that fired inside the window
    takes the colour of its latest event (latest in stream order on ties)."""
    colors = colors or PolarityColorMap()
    img = np.asarray(image)
    g = window.geometry
    if img.shape != (g.height, g.width, 3):
        raise GeometryMismatch(
            f"image shape {img.shape} does not match sensor {(g.height, g.width, 3)}"
        )
    if img.dtype != np.uint8:
        raise TypeError(f"overlay expects an 8-bit RGB image, got {img.dtype}")
    out = img.copy()
    last = kernels.latest_index(window.x, window.y, g.width, g.height)
    hit = np.flatnonzero(last >= 0)
    if hit.size:
        out.reshape(-1, 3)[hit] = colors.lookup(window.p[last[hit]])
    return out
