"""Central finite-difference gradient checker."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


def grad_check(f: Callable[[np.ndarray], tuple[float, np.ndarray]],
               params: np.ndarray, eps: float = 1e-5) -> float:
    """Compare the analytic gradient of a scalar function against central
    differences.

    ``f(params)`` must return ``(value, grad)`` with ``grad`` shaped like
    ``params``.  Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    params = np.asarray(params, dtype=np.float64)
    value, grad = f(params)
    if not math.isfinite(value):
        raise ValueError(f"non-finite function value {value}")
    grad = np.asarray(grad, dtype=np.float64)

    worst = 0.0
    flat = params.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp, _ = f(params)
        flat[i] = orig - eps
        fm, _ = f(params)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"non-finite function value near coordinate {i}")
        numeric = (fp - fm) / (2.0 * eps)
        analytic = gflat[i]
        rel = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, rel)
    return worst


def pack_params(named: dict[str, np.ndarray]) -> tuple[np.ndarray, list[tuple[str, tuple]]]:
    """Flatten an ordered dict of arrays into one vector plus a layout spec."""
    layout = [(k, v.shape) for k, v in named.items()]
    vec = np.concatenate([v.reshape(-1) for v in named.values()]) if named else np.empty(0)
    return vec, layout


def unpack_params(vec: np.ndarray, layout: list[tuple[str, tuple]]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    off = 0
    for name, shape in layout:
        n = int(np.prod(shape)) if shape else 1
        out[name] = vec[off:off + n].reshape(shape)
        off += n
    return out
