"""Loss terms: data misfit, normalized PDE residual, causal weighting.

The residual is the speed-form conservation law in normalized coordinates,
r = (A u_x - B u u_x - u_t) / sqrt(A^2 + B^2 + 1); the denominator scales
the coefficient vector to unit length so residual magnitudes are comparable
across normalizations. Causal weights damp later time bins by the
accumulated residual mass of earlier ones and are treated as constants by
the gradient computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import EvalBundle
from .lwr import NondimCoeffs

__all__ = [
    "LossWeights",
    "CausalConfig",
    "data_loss",
    "data_loss_seeds",
    "pde_residual",
    "viscosity_residual",
    "residual_seeds",
    "causal_weights",
    "assign_bins",
    "pde_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    w_data: float = 0.85
    w_pde: float = 0.05
    w_int: float = 0.10


@dataclass(frozen=True)
class CausalConfig:
    n_bins: int = 10
    epsilon: float = 1.0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def data_loss(predictions, observations) -> float:
    predictions = np.asarray(predictions, dtype=float)
    observations = np.asarray(observations, dtype=float)
    if predictions.shape != observations.shape:
        raise ValueError("prediction/observation length mismatch")
    if predictions.size == 0:
        raise ValueError("empty observation set")
    return float(np.mean((predictions - observations) ** 2))


def data_loss_seeds(predictions, observations) -> np.ndarray:
    """d(data_loss)/d(predictions), ready to seed reverse mode."""
    predictions = np.asarray(predictions, dtype=float)
    observations = np.asarray(observations, dtype=float)
    return 2.0 * (predictions - observations) / predictions.size


def pde_residual(bundle: EvalBundle, coeffs: NondimCoeffs) -> np.ndarray:
    if bundle.du_dx is None or bundle.du_dt is None:
        raise ValueError("bundle lacks first-order input derivatives")
    return (coeffs.A * bundle.du_dx - coeffs.B * bundle.u * bundle.du_dx - bundle.du_dt) / coeffs.scale


def viscosity_residual(bundle: EvalBundle, coeffs: NondimCoeffs, eps_visc: float = 0.1) -> np.ndarray:
    """PDE residual plus eps_visc * u_xx under the same unit-scale normalizer."""
    if bundle.d2u_dx2 is None:
        raise ValueError("bundle lacks the second derivative")
    return pde_residual(bundle, coeffs) + eps_visc * bundle.d2u_dx2 / coeffs.scale


def residual_seeds(
    bundle: EvalBundle,
    coeffs: NondimCoeffs,
    residuals: np.ndarray,
    point_weights,
    eps_visc: float | None = None,
    prefactor: float = 1.0,
) -> dict:
    """Seed cotangents of prefactor * mean(w_i * r_i^2) w.r.t. the bundle.

    point_weights are detached constants (causal weights or ones).
    """
    n = residuals.shape[0]
    w = np.broadcast_to(np.asarray(point_weights, dtype=float), residuals.shape)
    dl_dr = prefactor * 2.0 * w * residuals / n
    seeds = {
        "bar_u": dl_dr * (-coeffs.B * bundle.du_dx) / coeffs.scale,
        "bar_du_dx": dl_dr * (coeffs.A - coeffs.B * bundle.u) / coeffs.scale,
        "bar_du_dt": -dl_dr / coeffs.scale,
    }
    if eps_visc is not None:
        seeds["bar_d2u_dx2"] = dl_dr * eps_visc / coeffs.scale
    return seeds


def assign_bins(t_values, n_bins: int) -> np.ndarray:
    """Temporal bin id per point: sort by t, split into near-equal runs.

    Uses at most len(t_values) bins; when the count is not divisible the
    earliest bins take the extra point each.
    """
    t_values = np.asarray(t_values, dtype=float)
    n = t_values.size
    if n == 0:
        raise ValueError("no points to bin")
    n_eff = min(n_bins, n)
    order = np.argsort(t_values, kind="stable")
    sizes = [len(part) for part in np.array_split(np.empty(n), n_eff)]
    ids = np.empty(n, dtype=np.int64)
    start = 0
    for b, size in enumerate(sizes):
        ids[order[start : start + size]] = b
        start += size
    return ids


def causal_weights(sq_residuals_by_time, cfg: CausalConfig) -> np.ndarray:
    """Per-bin weights w_j = exp(-eps * sum of earlier bins' mean sq residual).

    Input must already be sorted by time. Bin 1 always gets weight 1.
    """
    sq = np.asarray(sq_residuals_by_time, dtype=float)
    if sq.size == 0:
        raise ValueError("no residuals to weight")
    n_eff = min(cfg.n_bins, sq.size)
    means = np.array([part.mean() for part in np.array_split(sq, n_eff)])
    prefix = np.concatenate([[0.0], np.cumsum(means)[:-1]])
    return np.exp(-cfg.epsilon * prefix)


def causal_weights_from_bins(bin_means: np.ndarray, epsilon: float) -> np.ndarray:
    """Same rule, starting from precomputed per-bin mean squared residuals."""
    prefix = np.concatenate([[0.0], np.cumsum(bin_means)[:-1]])
    return np.exp(-epsilon * prefix)


def pde_loss(per_subdomain: list) -> float:
    """Average over subdomains of mean(w_i * r_i^2).

    per_subdomain holds (residuals, weights) pairs; weights may be scalar 1.
    """
    if not per_subdomain:
        raise ValueError("no subdomain batches")
    parts = []
    for residuals, weights in per_subdomain:
        residuals = np.asarray(residuals, dtype=float)
        if residuals.size == 0:
            raise ValueError("empty subdomain batch")
        parts.append(float(np.mean(np.asarray(weights, dtype=float) * residuals**2)))
    return float(np.mean(parts))


def total_loss(l_data: float, l_pde: float, l_int: float, weights: LossWeights) -> float:
    parts = (l_data, l_pde, l_int)
    if not all(np.isfinite(p) for p in parts):
        raise ValueError("non-finite loss part")
    return weights.w_data * l_data + weights.w_pde * l_pde + weights.w_int * l_int
