"""Classical SGD with momentum on named parameter dicts."""

from __future__ import annotations

import numpy as np


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is at most
    ``max_norm``; returns the pre-clip norm.  Non-finite norms abort."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return float(norm)


class SgdMomentum:
    """v <- mu*v + g;  p <- p - lr*v.  Aborts loudly on non-finite grads."""

    def __init__(self, lr: float, momentum: float = 0.0):
        if lr < 0.0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scales: dict[str, float] | None = None) -> None:
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                self.velocity[name] = v
            v *= self.momentum
            v += g
            scale = lr_scales.get(name, 1.0) if lr_scales else 1.0
            p -= self.lr * scale * v


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float,
             momentum: float = 0.0, velocity: np.ndarray | None = None
             ) -> tuple[np.ndarray, np.ndarray]:
    """One array-level momentum step; returns (new_params, new_velocity)."""
    if lr < 0.0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradients")
    if velocity is None:
        velocity = np.zeros_like(params)
    velocity = momentum * velocity + grads
    return params - lr * velocity, velocity
