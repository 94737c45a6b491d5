"""Central finite-difference check of the adapter's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evla.errors import NonFiniteGradient
from evla.fusion.adapter import (
    AdapterConfig,
    AdapterParams,
    adapter_forward,
    adapter_value_and_grad,
    init_params,
)

FD_STEP = 1e-4
# below this magnitude, differences are judged in absolute terms
SCALE_FLOOR = 1e-6
# Weights for the check are drawn wider than the training init.  With std 0.02
# the attention output bias gradient is ~1e-3 and the O(h^2) truncation of the
# central difference dominates the comparison; at 0.2 it does not.
PROBE_STD = 0.2


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray


def random_probe(config: AdapterConfig, seed: int = 0, resolution=None):
    """A random (uint8 image, event frame) pair; default size is 2x2 patches."""
    rng = np.random.default_rng(seed)
    h, w = resolution or (2 * config.patch_size, 2 * config.patch_size)
    image = rng.integers(0, 256, size=(h, w, config.in_channels), dtype=np.uint8)
    event_frame = rng.random((h, w, config.in_channels))
    return image, event_frame


def probe_params(config: AdapterConfig, seed: int = 0) -> AdapterParams:
    """float64 parameters suited to finite differencing."""
    return init_params(config, seed=seed, std=PROBE_STD, dtype=np.float64)


def _loss(image, event_frame, params, config) -> float:
    return float(adapter_forward(image, event_frame, params, config).sum())


def numeric_gradient(params: AdapterParams, config: AdapterConfig, probe,
                     step: float = FD_STEP) -> np.ndarray:
    image, event_frame = probe
    work = params.astype(np.float64)
    grad = np.empty(work.size)
    for i in range(work.size):
        orig = work.flat[i]
        work.flat[i] = orig + step
        up = _loss(image, event_frame, work, config)
        work.flat[i] = orig - step
        down = _loss(image, event_frame, work, config)
        work.flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def analytic_gradient(params: AdapterParams, config: AdapterConfig, probe) -> np.ndarray:
    image, event_frame = probe
    _, grads = adapter_value_and_grad(image, event_frame, params.astype(np.float64), config)
    return grads.flat


def relative_errors(analytic: np.ndarray, numeric: np.ndarray,
                    floor: float = SCALE_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(params: AdapterParams, config: AdapterConfig, probe=None, seed: int = 0,
                    step: float = FD_STEP, grad_fn=None) -> GradCheckResult:
    """Compare analytic gradients of ``sum(output tokens)`` with central differences.

    ``grad_fn(params, config, probe) -> flat gradient`` replaces the analytic
    path; the test-suite uses it to plant bugs and confirm they are caught.
    """
    if probe is None:
        probe = random_probe(config, seed)
    analytic = np.asarray((grad_fn or analytic_gradient)(params, config, probe), dtype=np.float64)
    numeric = numeric_gradient(params, config, probe, step)
    for label, g in (("analytic", analytic), ("numeric", numeric)):
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise NonFiniteGradient(f"{label} gradient is not finite at flat index {bad}")
    rel = relative_errors(analytic, numeric)
    worst = int(np.argmax(rel)) if rel.size else 0
    name = ""
    for n in params.names():
        s = params.slice_of(n)
        if s.start <= worst < s.stop:
            name = n
            break
    return GradCheckResult(float(rel.max()) if rel.size else 0.0, name, worst, analytic, numeric)


def gradient_check(params: AdapterParams, config: AdapterConfig, probe=None, seed: int = 0,
                   step: float = FD_STEP, grad_fn=None) -> float:
    """Worst relative error between analytic and finite-difference gradients."""
    return check_gradients(params, config, probe, seed, step, grad_fn).max_rel_error
