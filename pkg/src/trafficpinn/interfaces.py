"""Subdomain interface treatment: classification and coupling losses.

Spatial interfaces switch per step between a smooth mode (value plus
x-gradient continuity) and a shock mode (Rankine-Hugoniot consistency with
a trainable shock speed, plus a Lax entropy penalty); temporal interfaces
enforce value continuity only. All interface physics runs in normalized
coordinates with the unit Greenshields diagram, where density is 1 - u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, eval_with_input_derivs
from .streams import INTERFACE, stream

__all__ = [
    "InterfaceState",
    "sample_interface",
    "classify",
    "smooth_loss",
    "rh_loss",
    "entropy_loss",
    "temporal_c0_loss",
    "interface_loss",
    "interface_terms",
]


@dataclass
class InterfaceState:
    """One interface segment between two subdomain cells.

    position is the fixed coordinate; span bounds the free coordinate (the
    whole axis for 1-D partitions, half of it for 2x2 segments). s is the
    trainable shock speed, meaningful for spatial orientation only.
    """

    position: float
    orientation: str
    left: int
    right: int
    index: int
    span: tuple = (0.0, 1.0)
    s: float = 0.0
    delta_shock: float = 0.1
    w_entropy: float = 1.0
    n_int: int = 200
    classification: str = "smooth"

    def __post_init__(self):
        if self.orientation not in ("spatial", "temporal"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if not 0 < self.position < 1:
            raise ValueError("interface must lie strictly inside the domain")
        if not self.delta_shock > 0:
            raise ValueError("delta_shock must be positive")
        if not np.isfinite(self.s):
            raise ValueError("s must be finite")


def sample_interface(state: InterfaceState, seed: int, step: int) -> np.ndarray:
    """Fresh uniform draws of the free coordinate, deterministic per step."""
    rng = stream(seed, INTERFACE, state.index, step)
    lo, hi = state.span
    return rng.uniform(lo, hi, state.n_int)


def classify(u_left, u_right, delta_shock: float) -> str:
    """shock iff the mean absolute normalized-density jump exceeds delta."""
    u_left = np.asarray(u_left, dtype=float)
    u_right = np.asarray(u_right, dtype=float)
    if u_left.shape != u_right.shape:
        raise ValueError("sample count mismatch across the interface")
    jump = float(np.mean(np.abs((1.0 - u_left) - (1.0 - u_right))))
    return "shock" if jump > delta_shock else "smooth"


def smooth_loss(u_left, u_right, dux_left, dux_right) -> float:
    """Mean squared value gap plus mean squared x-gradient gap."""
    value = np.mean((np.asarray(u_left) - np.asarray(u_right)) ** 2)
    grad = np.mean((np.asarray(dux_left) - np.asarray(dux_right)) ** 2)
    return float(value + grad)


def rh_loss(rho_left, rho_right, s: float) -> float:
    """Mean squared Rankine-Hugoniot defect with the unit Greenshields flux."""
    rho_left = np.asarray(rho_left, dtype=float)
    rho_right = np.asarray(rho_right, dtype=float)
    q_l = rho_left * (1.0 - rho_left)
    q_r = rho_right * (1.0 - rho_right)
    defect = s * (rho_left - rho_right) - (q_l - q_r)
    return float(np.mean(defect**2))


def entropy_loss(rho_left, rho_right, s: float) -> float:
    """Squared violations of the Lax band lambda_L >= s >= lambda_R."""
    lam_l = 1.0 - 2.0 * np.asarray(rho_left, dtype=float)
    lam_r = 1.0 - 2.0 * np.asarray(rho_right, dtype=float)
    up = np.maximum(s - lam_l, 0.0)
    down = np.maximum(lam_r - s, 0.0)
    return float(np.mean(up**2 + down**2))


def temporal_c0_loss(u_before, u_after) -> float:
    return float(np.mean((np.asarray(u_before) - np.asarray(u_after)) ** 2))


def _spatial_terms(state: InterfaceState, net_l, net_r, t_samples):
    """Loss value, per-net seed cotangents, and ds for one spatial interface."""
    n = t_samples.shape[0]
    x = np.full(n, state.position)
    bl = eval_with_input_derivs(net_l, x, t_samples)
    br = eval_with_input_derivs(net_r, x, t_samples)
    mode = classify(bl.u, br.u, state.delta_shock)
    state.classification = mode

    if mode == "smooth":
        loss = smooth_loss(bl.u, br.u, bl.du_dx, br.du_dx)
        dv = 2.0 * (bl.u - br.u) / n
        dg = 2.0 * (bl.du_dx - br.du_dx) / n
        seeds_l = {"bar_u": dv, "bar_du_dx": dg}
        seeds_r = {"bar_u": -dv, "bar_du_dx": -dg}
        return loss, (bl, seeds_l), (br, seeds_r), 0.0

    rho_l = 1.0 - bl.u
    rho_r = 1.0 - br.u
    s = state.s
    l_rh = rh_loss(rho_l, rho_r, s)
    l_ent = entropy_loss(rho_l, rho_r, s)
    loss = l_rh + state.w_entropy * l_ent

    defect = s * (rho_l - rho_r) - (rho_l * (1.0 - rho_l) - rho_r * (1.0 - rho_r))
    # d(defect)/d(rho) = s - q'(rho); d(rho)/d(u) = -1
    bar_ul = (2.0 * defect / n) * (s - (1.0 - 2.0 * rho_l)) * (-1.0)
    bar_ur = (2.0 * defect / n) * (s - (1.0 - 2.0 * rho_r))
    ds = float(np.mean(2.0 * defect * (rho_l - rho_r)))

    lam_l = 1.0 - 2.0 * rho_l
    lam_r = 1.0 - 2.0 * rho_r
    up = np.maximum(s - lam_l, 0.0)
    down = np.maximum(lam_r - s, 0.0)
    # lambda = 2u - 1 in u terms, so dlambda/du = 2
    bar_ul = bar_ul + state.w_entropy * (-4.0 * up) / n
    bar_ur = bar_ur + state.w_entropy * (4.0 * down) / n
    ds += state.w_entropy * float(np.mean(2.0 * up - 2.0 * down))

    return loss, (bl, {"bar_u": bar_ul}), (br, {"bar_u": bar_ur}), ds


def _temporal_terms(state: InterfaceState, net_before, net_after, x_samples):
    n = x_samples.shape[0]
    t = np.full(n, state.position)
    bb = eval_with_input_derivs(net_before, x_samples, t, want_first=False)
    ba = eval_with_input_derivs(net_after, x_samples, t, want_first=False)
    state.classification = "smooth"
    loss = temporal_c0_loss(bb.u, ba.u)
    dv = 2.0 * (bb.u - ba.u) / n
    return loss, (bb, {"bar_u": dv}), (ba, {"bar_u": -dv}), 0.0


def interface_terms(partition, seed: int, step: int) -> tuple:
    """Total interface loss, per-net GradientSets, and per-interface ds.

    Classification happens here, per step, from fresh samples. Gradients
    are of the unweighted sum over interfaces; the trainer applies the
    loss-weight factor.
    """
    if not partition.interfaces:
        raise ValueError("partition has no interfaces")
    total = 0.0
    net_grads: dict = {}
    s_grads: dict = {}
    for state in partition.interfaces:
        samples = sample_interface(state, seed, step)
        nl, nr = partition.nets[state.left], partition.nets[state.right]
        if state.orientation == "spatial":
            loss, (bl, sl), (br, sr), ds = _spatial_terms(state, nl, nr, samples)
        else:
            loss, (bl, sl), (br, sr), ds = _temporal_terms(state, nl, nr, samples)
        total += loss
        for idx, bundle, seeds in ((state.left, bl, sl), (state.right, br, sr)):
            g = backward(partition.nets[idx], bundle, **seeds)
            if idx in net_grads:
                net_grads[idx].add_(g)
            else:
                net_grads[idx] = g
        if state.orientation == "spatial":
            s_grads[state.index] = s_grads.get(state.index, 0.0) + ds
    return total, net_grads, s_grads


def interface_loss(partition, seed: int, step: int) -> float:
    """Value-only variant of interface_terms."""
    total, _, _ = interface_terms(partition, seed, step)
    return total
