"""Independent brute-force references.

These deliberately share no code with the package: plain Python loops over
event lists, per-pixel neighbourhood averages, dense microsecond stepping.
"""

from __future__ import annotations

import math

import numpy as np


def random_events(rng, n, width, height, t_max=100_000, dup_rate=0.3):
    """Sorted (x, y, t, p) rows with plenty of equal timestamps."""
    t = np.sort(rng.integers(0, t_max, n))
    if n > 1 and dup_rate:
        dup = rng.random(n - 1) < dup_rate
        for i in np.flatnonzero(dup):
            t[i + 1] = t[i]
        t = np.sort(t)
    x = rng.integers(0, width, n)
    y = rng.integers(0, height, n)
    p = rng.choice([-1, 1], n)
    return [(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(x, y, t, p)]


# -- windowing ---------------------------------------------------------------

def recent_count(rows, t_e, n):
    prefix = [e for e in rows if e[2] <= t_e]
    return prefix[max(0, len(prefix) - n):]


def duration(rows, t_e, delta):
    return [e for e in rows if t_e - delta < e[2] <= t_e]


# -- representation ----------------------------------------------------------

def tally(rows, width, height, signed=False):
    out = [[0] * width for _ in range(height)]
    for x, y, _, p in rows:
        out[y][x] += p if signed else 1
    return np.array(out, dtype=np.int64).reshape(height, width)


def bayer_colour(pattern, row, col):
    return pattern[(row % 2) * 2 + (col % 2)]


def demosaic(mosaic, pattern):
    """Mean of the same-colour sites in the image-clipped 3x3 neighbourhood.

    On a Bayer mosaic those sites are all equidistant from the centre, so the
    plain mean is bilinear interpolation.
    """
    h, w = mosaic.shape
    out = np.zeros((h, w, 3))
    for r in range(h):
        for c in range(w):
            for ch, name in enumerate("RGB"):
                if bayer_colour(pattern, r, c) == name:
                    out[r, c, ch] = mosaic[r, c]
                    continue
                vals = [mosaic[rr, cc]
                        for rr in range(max(r - 1, 0), min(r + 2, h))
                        for cc in range(max(c - 1, 0), min(c + 2, w))
                        if bayer_colour(pattern, rr, cc) == name]
                out[r, c, ch] = sum(vals) / len(vals)
    return out


def time_surface(rows, t_e, tau, width, height):
    out = np.zeros((height, width))
    last = {}
    for x, y, t, _ in rows:
        last[(x, y)] = t
    for (x, y), t in last.items():
        out[y, x] = math.exp(-(t_e - t) / tau)
    return out


def voxel(rows, bins, width, height):
    out = np.zeros((bins, height, width))
    if not rows:
        return out
    t0, t1 = rows[0][2], rows[-1][2]
    for x, y, t, p in rows:
        tn = 0.0 if t1 == t0 else (bins - 1) * (t - t0) / (t1 - t0)
        for b in range(bins):
            out[b, y, x] += p * max(0.0, 1.0 - abs(tn - b))
    return out


# -- overlay -----------------------------------------------------------------

def overlay(image, rows, on, off):
    out = image.copy()
    buckets = {}
    for idx, (x, y, t, p) in enumerate(rows):
        buckets.setdefault((x, y), []).append((t, idx, p))
    for (x, y), evs in buckets.items():
        _, _, p = max(evs)          # latest time, then latest stream position
        out[y, x] = on if p > 0 else off
    return out


# -- simulator ---------------------------------------------------------------

def dense_events(logs, times, threshold):
    """Step every pixel's interpolated log signal one microsecond at a time.

    ``logs`` is (K, n_pix).  Returns (pixel, t, p) rows sorted by (t, pixel).
    """
    base = logs[0]
    m = np.zeros(logs.shape[1], dtype=np.int64)
    rows = []
    for k in range(len(times) - 1):
        t0, dt = int(times[k]), int(times[k + 1] - times[k])
        L0, slope = logs[k], logs[k + 1] - logs[k]
        for off in range(1, dt + 1):
            L = L0 + slope * (off / dt)
            fired = []
            while True:
                up = base + (m + 1) * threshold <= L
                dn = base + (m - 1) * threshold >= L
                if not (up.any() or dn.any()):
                    break
                m = m + up - dn
                fired += [(int(j), 1) for j in np.flatnonzero(up)]
                fired += [(int(j), -1) for j in np.flatnonzero(dn)]
            for j, p in sorted(fired, key=lambda e: e[0]):
                rows.append((j, t0 + off, p))
    rows.sort(key=lambda e: (e[1], e[0]))
    return rows


def box_blur_reference(frames_at, a, b, steps=20000):
    """Midpoint-rule average of frames_at(t) over [a, b]."""
    ts = a + (np.arange(steps) + 0.5) * (b - a) / steps
    return sum(frames_at(t) for t in ts) / steps
