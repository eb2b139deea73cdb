"""Exact derivatives of the Fourier-feature MLP, without a framework.

Forward mode propagates two fixed directional tangents (d/dx, d/dt) and
optionally the second tangent d2/dx2 through the embedding and the tanh
layers, giving exact input derivatives alongside the values. Reverse mode
then accumulates parameter gradients of any scalar loss expressed through
seed cotangents on (u, du_dx, du_dt, d2u_dx2). The chain for the tangent
paths is what makes losses containing input derivatives differentiable in
the parameters: each layer's reverse step couples the value and tangent
bars through tanh', tanh'' and the third-derivative term.

The Fourier matrix is a constant of the computation; no gradient for it is
ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import PinnNetwork

__all__ = ["EvalBundle", "GradientSet", "eval_with_input_derivs", "backward"]


@dataclass
class EvalBundle:
    """Values and exact input derivatives at a batch, plus the reverse tape."""

    u: np.ndarray
    du_dx: np.ndarray | None
    du_dt: np.ndarray | None
    d2u_dx2: np.ndarray | None
    _tape: dict

    def __len__(self) -> int:
        return self.u.shape[0]


@dataclass
class GradientSet:
    """Per-layer (weight, bias) gradient arrays mirroring a network."""

    layers: list

    @classmethod
    def zeros_like(cls, net: PinnNetwork) -> "GradientSet":
        return cls(layers=[(np.zeros_like(w), np.zeros_like(b)) for w, b in net.layers])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            layers=[(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(self.layers, other.layers)]
        )

    def __mul__(self, c: float) -> "GradientSet":
        return GradientSet(layers=[(w * c, b * c) for w, b in self.layers])

    __rmul__ = __mul__

    def add_(self, other: "GradientSet", scale: float = 1.0) -> "GradientSet":
        for (w, b), (ow, ob) in zip(self.layers, other.layers):
            w += scale * ow
            b += scale * ob
        return self

    def norm_sq(self) -> float:
        return float(sum(np.sum(w * w) + np.sum(b * b) for w, b in self.layers))

    def scale_(self, c: float) -> "GradientSet":
        for w, b in self.layers:
            w *= c
            b *= c
        return self


def eval_with_input_derivs(
    net: PinnNetwork,
    x,
    t,
    want_second: bool = False,
    want_first: bool = True,
) -> EvalBundle:
    """Forward pass recording everything reverse mode needs.

    want_first=False skips the tangent chains entirely (cheap data-fit
    evaluations); want_second adds the d2/dx2 tangent.
    """
    if want_second and not want_first:
        raise ValueError("second derivative requires the first-order tangents")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if x.shape != t.shape or x.ndim != 1:
        raise ValueError("x and t must be matching 1-D arrays")

    W = net.fourier
    z = np.stack([x, t], axis=1) @ W.T
    sin_z, cos_z = np.sin(z), np.cos(z)
    h = np.concatenate([sin_z, cos_z], axis=1)
    gx = gt = w2 = None
    if want_first:
        wx, wt = W[:, 0], W[:, 1]
        gx = np.concatenate([cos_z * wx, -sin_z * wx], axis=1)
        gt = np.concatenate([cos_z * wt, -sin_z * wt], axis=1)
        if want_second:
            w2 = -h * np.concatenate([wx * wx, wx * wx], axis=0)

    inputs = []
    post = []
    for weight, bias in net.layers[:-1]:
        inputs.append((h, gx, gt, w2))
        s = h @ weight + bias
        hn = np.tanh(s)
        phi1 = 1.0 - hn * hn
        ux = ut = v = None
        if want_first:
            ux = gx @ weight
            ut = gt @ weight
            if want_second:
                v = w2 @ weight
                w2 = (-2.0 * hn * phi1) * ux * ux + phi1 * v
            gx = phi1 * ux
            gt = phi1 * ut
        post.append((hn, ux, ut, v, phi1))
        h = hn
    inputs.append((h, gx, gt, w2))

    weight, bias = net.layers[-1]
    u = (h @ weight + bias)[:, 0]
    du_dx = (gx @ weight)[:, 0] if want_first else None
    du_dt = (gt @ weight)[:, 0] if want_first else None
    d2u_dx2 = (w2 @ weight)[:, 0] if want_second else None
    tape = {"inputs": inputs, "post": post, "n": x.shape[0]}
    return EvalBundle(u=u, du_dx=du_dx, du_dt=du_dt, d2u_dx2=d2u_dx2, _tape=tape)


def _col(v, n) -> np.ndarray | None:
    if v is None:
        return None
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"cotangent must have shape ({n},)")
    return v[:, None]


def backward(
    net: PinnNetwork,
    bundle: EvalBundle,
    bar_u=None,
    bar_du_dx=None,
    bar_du_dt=None,
    bar_d2u_dx2=None,
) -> GradientSet:
    """Parameter gradients of sum(bar_u*u + bar_du_dx*du_dx + ...).

    Seed cotangents are the loss derivatives w.r.t. the bundle outputs;
    any may be omitted. Summation order is fixed, so results are exactly
    reproducible for a given batch.
    """
    n = bundle._tape["n"]
    inputs = bundle._tape["inputs"]
    post = bundle._tape["post"]
    bu = _col(bar_u, n)
    bux = _col(bar_du_dx, n)
    but = _col(bar_du_dt, n)
    buxx = _col(bar_d2u_dx2, n)
    if bundle.du_dx is None and (bux is not None or but is not None or buxx is not None):
        raise ValueError("bundle was evaluated without first-order tangents")
    if buxx is not None and bundle.d2u_dx2 is None:
        raise ValueError("bundle was evaluated without the second derivative")
    if all(v is None for v in (bu, bux, but, buxx)):
        return GradientSet.zeros_like(net)

    grads: list = [None] * len(net.layers)
    weight, _ = net.layers[-1]
    h, gx, gt, w2 = inputs[-1]

    gw = np.zeros_like(weight)
    gb = np.zeros(weight.shape[1])
    hb = gxb = gtb = wb = None
    if bu is not None:
        gw += h.T @ bu
        gb += bu.sum(axis=0)
        hb = bu @ weight.T
    if bux is not None:
        gw += gx.T @ bux
        gxb = bux @ weight.T
    if but is not None:
        gw += gt.T @ but
        gtb = but @ weight.T
    if buxx is not None:
        gw += w2.T @ buxx
        wb = buxx @ weight.T
    grads[-1] = (gw, gb)

    for k in range(len(net.layers) - 2, -1, -1):
        h_in, gx_in, gt_in, w_in = inputs[k]
        hn, ux, ut, v, phi1 = post[k]
        phi2 = -2.0 * hn * phi1

        sb = np.zeros_like(hn)
        if hb is not None:
            sb += phi1 * hb
        uxb = utb = vb = None
        coupling = None
        if gxb is not None:
            uxb = phi1 * gxb
            coupling = ux * gxb
        if gtb is not None:
            utb = phi1 * gtb
            coupling = ut * gtb if coupling is None else coupling + ut * gtb
        if wb is not None:
            # bars through w_next = phi2*ux^2 + phi1*v
            uxb = 2.0 * phi2 * ux * wb if uxb is None else uxb + 2.0 * phi2 * ux * wb
            vb = phi1 * wb
            coupling = v * wb if coupling is None else coupling + v * wb
            # d(phi2)/ds path: phi2' = -2*(phi1^2 + hn*phi2)
            sb += (-2.0 * (phi1 * phi1 + hn * phi2)) * (ux * ux) * wb
        if coupling is not None:
            sb += phi2 * coupling

        weight, _ = net.layers[k]
        gw = h_in.T @ sb
        gb = sb.sum(axis=0)
        if uxb is not None:
            gw += gx_in.T @ uxb
        if utb is not None:
            gw += gt_in.T @ utb
        if vb is not None:
            gw += w_in.T @ vb
        grads[k] = (gw, gb)

        if k > 0:
            hb = sb @ weight.T
            gxb = uxb @ weight.T if uxb is not None else None
            gtb = utb @ weight.T if utb is not None else None
            wb = vb @ weight.T if vb is not None else None

    return GradientSet(layers=grads)
