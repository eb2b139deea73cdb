"""Decomposition direction variants: split along t, or along x and t together.

Both operations assume the coarse network is already trained; they run the
residual-profile pipeline on the requested axes and wire child networks
exactly like the spatial default. Spatial sub-interfaces keep the trainable
shock-speed treatment; temporal ones only enforce continuity in time.
"""

from __future__ import annotations

from .decomposition import (
    DELTA_MIN,
    PROFILE_NT,
    PROFILE_NX,
    ResidualProfile,
    create_children,
    detect_peaks,
    residual_profile,
    select_splits,
)
from .lwr import NondimCoeffs
from .network import Architecture, Partition, PinnNetwork

__all__ = ["split_spacetime", "split_temporal"]


def _axis_valleys(profile: ResidualProfile, max_splits: int, delta_min: float) -> tuple:
    peaks = detect_peaks(profile.smoothed)
    if not peaks:
        return ()
    k = min(len(peaks), max_splits)
    return select_splits(profile.smoothed, k, delta_min=delta_min,
                         positions=profile.positions)


def split_temporal(net: PinnNetwork, coeffs: NondimCoeffs, *, seed: int,
                   child_arch: Architecture | None = None,
                   n_x: int = PROFILE_NX, n_t: int = PROFILE_NT,
                   delta_min: float = DELTA_MIN, max_subdomains: int = 2,
                   **child_kwargs) -> Partition | None:
    """Split at the deepest valleys of R(t).

    Returns None when R(t) shows no eligible peak (single-domain fallback:
    the caller keeps training the coarse network unchanged).
    """
    profile = residual_profile(net, coeffs, "t", n_x, n_t)
    splits = _axis_valleys(profile, max_subdomains - 1, delta_min)
    if not splits:
        return None
    return create_children(net, (), splits, child_arch, seed=seed,
                           delta_min=delta_min, **child_kwargs)


def split_spacetime(net: PinnNetwork, coeffs: NondimCoeffs, *, seed: int,
                    child_arch: Architecture | None = None,
                    n_x: int = PROFILE_NX, n_t: int = PROFILE_NT,
                    delta_min: float = DELTA_MIN, **child_kwargs) -> Partition:
    """One split per axis from residual valleys, yielding a 2x2 partition.

    An axis whose profile carries no eligible peak falls back to an equally
    spaced split at 0.5, so the result always has four subdomains.
    """
    chosen = []
    for axis in ("x", "t"):
        profile = residual_profile(net, coeffs, axis, n_x, n_t)
        splits = _axis_valleys(profile, 1, delta_min)
        chosen.append(splits if splits else (0.5,))
    return create_children(net, chosen[0], chosen[1], child_arch, seed=seed,
                           delta_min=delta_min, **child_kwargs)
