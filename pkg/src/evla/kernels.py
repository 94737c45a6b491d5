"""Hot per-event kernels, each in a numba and a pure-numpy flavour.

The two flavours of a kernel return bit-identical results; the test-suite
checks that.  Public code calls the dispatching wrappers at the bottom of this
module, which route to whichever backend :mod:`evla._accel` has selected.
"""

from __future__ import annotations

import numpy as np

from evla import _accel
from evla._accel import njit


# ---------------------------------------------------------------------------
# stream validation

@njit
def _first_unsorted_nb(t):
    for i in range(1, t.shape[0]):
        if t[i] < t[i - 1]:
            return i
    return -1


def _first_unsorted_np(t):
    if t.shape[0] < 2:
        return -1
    bad = t[1:] < t[:-1]
    i = int(np.argmax(bad))
    return i + 1 if bad[i] else -1


@njit
def _first_out_of_bounds_nb(x, y, width, height):
    for i in range(x.shape[0]):
        if x[i] >= width or y[i] >= height:
            return i
    return -1


def _first_out_of_bounds_np(x, y, width, height):
    if x.shape[0] == 0:
        return -1
    bad = (x >= width) | (y >= height)
    i = int(np.argmax(bad))
    return i if bad[i] else -1


# ---------------------------------------------------------------------------
# accumulation

@njit
def _count_accumulate_nb(x, y, width, height):
    out = np.zeros((height, width), dtype=np.int64)
    for i in range(x.shape[0]):
        out[y[i], x[i]] += 1
    return out


def _count_accumulate_np(x, y, width, height):
    flat = y.astype(np.intp) * width + x
    return np.bincount(flat, minlength=width * height).astype(np.int64).reshape(height, width)


@njit
def _sum_accumulate_nb(x, y, p, width, height):
    out = np.zeros((height, width), dtype=np.int64)
    for i in range(x.shape[0]):
        out[y[i], x[i]] += p[i]
    return out


def _sum_accumulate_np(x, y, p, width, height):
    flat = y.astype(np.intp) * width + x
    on = np.bincount(flat[p > 0], minlength=width * height)
    off = np.bincount(flat[p < 0], minlength=width * height)
    return (on.astype(np.int64) - off.astype(np.int64)).reshape(height, width)


@njit
def _latest_index_nb(x, y, width, height):
    out = np.full(width * height, -1, dtype=np.int64)
    for i in range(x.shape[0]):
        out[y[i] * width + x[i]] = i
    return out


def _latest_index_np(x, y, width, height):
    out = np.full(width * height, -1, dtype=np.int64)
    flat = y.astype(np.intp) * width + x
    np.maximum.at(out, flat, np.arange(flat.shape[0], dtype=np.int64))
    return out


@njit
def _voxel_scatter_nb(x, y, p, tnorm, bins, width, height):
    out = np.zeros(bins * height * width, dtype=np.float64)
    plane = height * width
    n = x.shape[0]
    # left then right contributions, matching np.add.at ordering in the numpy path
    for i in range(n):
        left = int(np.floor(tnorm[i]))
        if left < bins:
            out[left * plane + y[i] * width + x[i]] += p[i] * (1.0 - (tnorm[i] - left))
    for i in range(n):
        left = int(np.floor(tnorm[i]))
        if left + 1 < bins:
            out[(left + 1) * plane + y[i] * width + x[i]] += p[i] * (tnorm[i] - left)
    return out.reshape(bins, height, width)


def _voxel_scatter_np(x, y, p, tnorm, bins, width, height):
    out = np.zeros(bins * height * width, dtype=np.float64)
    plane = height * width
    left = np.floor(tnorm).astype(np.int64)
    frac = tnorm - left
    pix = y.astype(np.int64) * width + x
    pf = p.astype(np.float64)
    ok = left < bins
    np.add.at(out, left[ok] * plane + pix[ok], pf[ok] * (1.0 - frac[ok]))
    ok = left + 1 < bins
    np.add.at(out, (left[ok] + 1) * plane + pix[ok], pf[ok] * frac[ok])
    return out.reshape(bins, height, width)


# ---------------------------------------------------------------------------
# log-intensity threshold crossing
#
# The log signal of one pixel between frames k and k+1 is
#     L(t) = L0 + (L1 - L0) * ((t - t0) / dt)
# evaluated at integer microseconds.  Reference levels are base + m * C with an
# integer m per pixel so that both backends compute levels with the same
# floating point expression.  An event is stamped at the first integer time at
# which L(t) reaches its level.

@njit
def _crossing_offset_nb(L0, slope, dt, level, rising):
    k = int(np.ceil((level - L0) / slope * dt))
    if k < 1:
        k = 1
    if k > dt:
        k = dt
    if rising:
        while k > 1 and L0 + slope * ((k - 1) / dt) >= level:
            k -= 1
        while k < dt and L0 + slope * (k / dt) < level:
            k += 1
    else:
        while k > 1 and L0 + slope * ((k - 1) / dt) <= level:
            k -= 1
        while k < dt and L0 + slope * (k / dt) > level:
            k += 1
    return k


@njit
def _threshold_events_nb(logs, times, threshold):
    n_frames, n_pix = logs.shape
    base = logs[0]
    m = np.zeros(n_pix, dtype=np.int64)
    total = 0
    for k in range(n_frames - 1):
        dt = times[k + 1] - times[k]
        for j in range(n_pix):
            L0 = logs[k, j]
            Lend = L0 + (logs[k + 1, j] - L0) * (dt / dt)
            if Lend > L0:
                while base[j] + (m[j] + 1) * threshold <= Lend:
                    m[j] += 1
                    total += 1
            elif Lend < L0:
                while base[j] + (m[j] - 1) * threshold >= Lend:
                    m[j] -= 1
                    total += 1

    pix = np.empty(total, dtype=np.int64)
    ts = np.empty(total, dtype=np.int64)
    pol = np.empty(total, dtype=np.int8)
    m[:] = 0
    e = 0
    for k in range(n_frames - 1):
        t0 = times[k]
        dt = times[k + 1] - t0
        for j in range(n_pix):
            L0 = logs[k, j]
            slope = logs[k + 1, j] - L0
            Lend = L0 + slope * (dt / dt)
            if Lend > L0:
                while base[j] + (m[j] + 1) * threshold <= Lend:
                    m[j] += 1
                    level = base[j] + m[j] * threshold
                    pix[e] = j
                    ts[e] = t0 + _crossing_offset_nb(L0, slope, dt, level, True)
                    pol[e] = 1
                    e += 1
            elif Lend < L0:
                while base[j] + (m[j] - 1) * threshold >= Lend:
                    m[j] -= 1
                    level = base[j] + m[j] * threshold
                    pix[e] = j
                    ts[e] = t0 + _crossing_offset_nb(L0, slope, dt, level, False)
                    pol[e] = -1
                    e += 1
    return pix, ts, pol


def _crossing_offset_np(L0, slope, dt, level, rising):
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.ceil((level - L0) / slope * dt)
    k = np.clip(np.nan_to_num(k, nan=1.0), 1, dt).astype(np.int64)

    def val(kk):
        return L0 + slope * (kk / dt)

    if rising:
        back = lambda kk: (kk > 1) & (val(kk - 1) >= level)
        fwd = lambda kk: (kk < dt) & (val(kk) < level)
    else:
        back = lambda kk: (kk > 1) & (val(kk - 1) <= level)
        fwd = lambda kk: (kk < dt) & (val(kk) > level)
    mask = back(k)
    while mask.any():
        k = k - mask
        mask = back(k)
    mask = fwd(k)
    while mask.any():
        k = k + mask
        mask = fwd(k)
    return k


def _expand_levels(pixels, m_start, counts, step):
    """Per-crossing pixel ids and level indices, pixel-major then level order."""
    total = int(counts.sum())
    pix = np.repeat(pixels, counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    j = np.arange(total, dtype=np.int64) - starts
    mm = np.repeat(m_start, counts) + step * (j + 1)
    return pix, mm


def _threshold_events_np(logs, times, threshold):
    n_frames, n_pix = logs.shape
    base = logs[0].copy()
    m = np.zeros(n_pix, dtype=np.int64)
    chunks_pix, chunks_t, chunks_p = [], [], []
    for k in range(n_frames - 1):
        t0 = int(times[k])
        dt = int(times[k + 1] - times[k])
        L0 = logs[k]
        slope = logs[k + 1] - L0
        Lend = L0 + slope * (dt / dt)

        parts = []
        for rising in (True, False):
            sel = np.flatnonzero(Lend > L0) if rising else np.flatnonzero(Lend < L0)
            if sel.size == 0:
                continue
            b, le, m0 = base[sel], Lend[sel], m[sel]
            step = 1 if rising else -1
            target = np.floor((le - b) / threshold).astype(np.int64)
            target = np.maximum(target, m0) if rising else np.minimum(target + 1, m0)
            # settle on the extreme level index reachable by Lend
            if rising:
                up = b + (target + 1) * threshold <= le
                while up.any():
                    target += up
                    up = b + (target + 1) * threshold <= le
                down = (target > m0) & (b + target * threshold > le)
                while down.any():
                    target -= down
                    down = (target > m0) & (b + target * threshold > le)
            else:
                dn = b + (target - 1) * threshold >= le
                while dn.any():
                    target -= dn
                    dn = b + (target - 1) * threshold >= le
                back = (target < m0) & (b + target * threshold < le)
                while back.any():
                    target += back
                    back = (target < m0) & (b + target * threshold < le)
            counts = np.abs(target - m0)
            m[sel] = target
            nz = counts > 0
            if not nz.any():
                continue
            pix, mm = _expand_levels(sel[nz], m0[nz], counts[nz], step)
            level = base[pix] + mm * threshold
            off = _crossing_offset_np(L0[pix], slope[pix], dt, level, rising)
            parts.append((pix, t0 + off, np.full(pix.shape[0], step, dtype=np.int8)))
        if not parts:
            continue
        pix = np.concatenate([q[0] for q in parts])
        order = np.argsort(pix, kind="stable")
        chunks_pix.append(pix[order])
        chunks_t.append(np.concatenate([q[1] for q in parts])[order])
        chunks_p.append(np.concatenate([q[2] for q in parts])[order])
    if not chunks_pix:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int8))
    return (np.concatenate(chunks_pix), np.concatenate(chunks_t).astype(np.int64),
            np.concatenate(chunks_p))


# ---------------------------------------------------------------------------
# dispatch

IMPLEMENTATIONS = {
    "first_unsorted": {"numba": _first_unsorted_nb, "numpy": _first_unsorted_np},
    "first_out_of_bounds": {"numba": _first_out_of_bounds_nb, "numpy": _first_out_of_bounds_np},
    "count_accumulate": {"numba": _count_accumulate_nb, "numpy": _count_accumulate_np},
    "sum_accumulate": {"numba": _sum_accumulate_nb, "numpy": _sum_accumulate_np},
    "latest_index": {"numba": _latest_index_nb, "numpy": _latest_index_np},
    "voxel_scatter": {"numba": _voxel_scatter_nb, "numpy": _voxel_scatter_np},
    "threshold_events": {"numba": _threshold_events_nb, "numpy": _threshold_events_np},
}


def impl(name: str, backend: str | None = None):
    return IMPLEMENTATIONS[name][backend or _accel.get_backend()]


def first_unsorted(t):
    return int(impl("first_unsorted")(t))


def first_out_of_bounds(x, y, width, height):
    return int(impl("first_out_of_bounds")(x, y, width, height))


def count_accumulate(x, y, width, height):
    return impl("count_accumulate")(x, y, width, height)


def sum_accumulate(x, y, p, width, height):
    return impl("sum_accumulate")(x, y, p, width, height)


def latest_index(x, y, width, height):
    return impl("latest_index")(x, y, width, height)


def voxel_scatter(x, y, p, tnorm, bins, width, height):
    return impl("voxel_scatter")(x, y, p, tnorm, bins, width, height)


def threshold_events(logs, times, threshold):
    """Raw crossings in (interval, pixel, level) order: (pixel, t, polarity)."""
    logs = np.ascontiguousarray(logs, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.int64)
    return impl("threshold_events")(logs, times, float(threshold))
