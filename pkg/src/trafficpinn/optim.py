"""Adam, step-decay schedule, global-norm clipping, Latin hypercube draws.

Parameter arrays are updated in place; the optimizer never sees a network's
Fourier matrix because only trainable arrays are registered with it.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "StepLR", "clip_global_norm", "latin_hypercube"]


class Adam:
    """Bias-corrected adaptive moments over a fixed list of arrays.

    betas (0.9, 0.999), eps 1e-8. Rebuilding the optimizer (fresh instance)
    resets the moments, which is exactly what the stage transition wants.
    """

    def __init__(self, arrays: list, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.arrays = list(arrays)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in self.arrays]
        self.v = [np.zeros_like(a) for a in self.arrays]

    def step(self, grads: list) -> None:
        if len(grads) != len(self.arrays):
            raise ValueError("gradient list does not match registered arrays")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise ValueError("non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class StepLR:
    """lr = base * factor^(completed_steps // step_size)."""

    def __init__(self, base_lr: float, step_size: int, factor: float = 0.9):
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        self.base_lr = float(base_lr)
        self.step_size = int(step_size)
        self.factor = float(factor)

    def lr_at(self, completed_steps: int) -> float:
        return self.base_lr * self.factor ** (completed_steps // self.step_size)


def clip_global_norm(grad_arrays: list, max_norm: float, extra_sq: float = 0.0) -> float:
    """Scale all arrays in place so the joint L2 norm is at most max_norm.

    extra_sq adds squared norm from scalars clipped alongside (trainable
    shock speeds); returns the scale factor so the caller can apply it to
    those scalars too.
    """
    total = extra_sq + sum(float(np.sum(g * g)) for g in grad_arrays)
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grad_arrays:
        g *= scale
    return scale


def latin_hypercube(n: int, rng: np.random.Generator) -> np.ndarray:
    """n points in [0,1]^2, one per stratum along each axis, randomly paired."""
    if n < 1:
        raise ValueError("need at least one point")
    out = np.empty((n, 2))
    for j in range(2):
        out[:, j] = (rng.permutation(n) + rng.uniform(0.0, 1.0, n)) / n
    return out
