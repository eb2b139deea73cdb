"""Residual-guided domain splitting.

Stage 1 trains one coarse network on the whole domain. This module turns its
residual field into a split decision: a shock indicator computed from the raw
observations gates the attempt, residual profiles along each axis are smoothed
and scanned for peaks, and low-residual valleys between peaks become split
positions. Child networks are then created per subdomain, warm-started against
the coarse network, and wired together with interface states.

No re-splitting happens later; the decision is made once between the stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import backward, eval_with_input_derivs
from .interfaces import InterfaceState
from .losses import pde_residual
from .lwr import NondimCoeffs
from .network import Architecture, CHILD_WIDTHS, Partition, PinnNetwork, forward, init_network, subdomain_index
from .optim import Adam
from .streams import WARMSTART, stream

DIRECTIONS = ("spatial", "temporal", "spacetime")
MODES = ("shock_screened", "decomposition_enabled")

TAU_SHOCK = 2.0
DELTA_MIN = 0.15

# residual grid resolution for profile extraction
PROFILE_NX = 200
PROFILE_NT = 100


@dataclass(frozen=True)
class ResidualProfile:
    """Mean squared residual along one axis, raw and smoothed."""

    axis: str
    positions: np.ndarray
    values: np.ndarray
    smoothed: np.ndarray

    def __post_init__(self):
        if self.axis not in ("x", "t"):
            raise ValueError(f"axis must be 'x' or 't', got {self.axis!r}")
        positions = np.asarray(self.positions, dtype=float)
        values = np.asarray(self.values, dtype=float)
        smoothed = np.asarray(self.smoothed, dtype=float)
        if not (positions.shape == values.shape == smoothed.shape) or positions.ndim != 1:
            raise ValueError("positions, values, smoothed must be parallel 1-D arrays")
        if values.size and values.min() < 0:
            raise ValueError("squared-residual profile cannot be negative")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "smoothed", smoothed)


@dataclass(frozen=True)
class SplitDecision:
    """Outcome of the between-stage split attempt.

    decomposed implies the splits for the requested direction are present and
    already validated against the minimum-width rule.
    """

    decomposed: bool
    direction: str
    indicator: float
    splits_x: tuple = ()
    splits_t: tuple = ()
    peaks_x: tuple = ()
    peaks_t: tuple = ()

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "splits_x", tuple(float(s) for s in self.splits_x))
        object.__setattr__(self, "splits_t", tuple(float(s) for s in self.splits_t))
        object.__setattr__(self, "peaks_x", tuple(int(i) for i in self.peaks_x))
        object.__setattr__(self, "peaks_t", tuple(int(i) for i in self.peaks_t))
        if self.decomposed:
            need_x = self.direction in ("spatial", "spacetime")
            need_t = self.direction in ("temporal", "spacetime")
            if (need_x and not self.splits_x) or (need_t and not self.splits_t):
                raise ValueError("decomposed decision must carry splits for its direction")

    def to_dict(self) -> dict:
        return {
            "decomposed": self.decomposed,
            "direction": self.direction,
            "indicator": self.indicator,
            "splits_x": list(self.splits_x),
            "splits_t": list(self.splits_t),
            "peaks_x": list(self.peaks_x),
            "peaks_t": list(self.peaks_t),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitDecision":
        return cls(
            decomposed=bool(doc["decomposed"]),
            direction=doc["direction"],
            indicator=float(doc["indicator"]),
            splits_x=tuple(doc.get("splits_x", ())),
            splits_t=tuple(doc.get("splits_t", ())),
            peaks_x=tuple(doc.get("peaks_x", ())),
            peaks_t=tuple(doc.get("peaks_t", ())),
        )


# ---------------------------------------------------------------------------
# shock indicator

def _ratio(values: np.ndarray) -> float:
    # max-to-mean; a zero mean means every gradient vanished, which is the
    # maximally uniform case, so it maps to 1
    m = float(np.mean(values))
    if m == 0.0:
        return 1.0
    return float(np.max(values) / m)


def shock_indicator(obs) -> float:
    """Dimensionless max-to-mean ratio of observed speed gradients.

    Spatial gradients are averaged per adjacent sensor pair over their common
    time steps; temporal gradients per sensor over consecutive samples. Speeds
    are divided by their largest magnitude first, so rescaling every speed by
    the same factor reproduces the identical float result.
    """
    sensors = sorted(obs.sensor_cells)
    peak = float(np.max(np.abs(obs.speeds))) if len(obs) else 0.0
    series = {}
    for c in sensors:
        steps, speeds = obs.series(c)
        series[c] = (steps, speeds / peak if peak > 0 else speeds)

    ratios = []
    if len(sensors) >= 2:
        grads_x = []
        for a, b in zip(sensors, sensors[1:]):
            steps_a, u_a = series[a]
            steps_b, u_b = series[b]
            common, ia, ib = np.intersect1d(steps_a, steps_b, return_indices=True)
            if common.size == 0:
                raise ValueError(f"sensors {a} and {b} share no time steps")
            grads_x.append(float(np.mean(np.abs(u_b[ib] - u_a[ia]))) / (b - a))
        ratios.append(_ratio(np.asarray(grads_x)))

    grads_t = []
    for c in sensors:
        steps, u = series[c]
        if steps.size < 2:
            continue
        dt = np.diff(steps).astype(float)
        grads_t.append(float(np.mean(np.abs(np.diff(u)) / dt)))
    if grads_t:
        ratios.append(_ratio(np.asarray(grads_t)))

    if not ratios:
        raise ValueError("shock indicator needs >= 2 sensors or >= 2 samples at one sensor")
    return max(ratios)


# ---------------------------------------------------------------------------
# residual profiles

def eval_residuals(net_or_partition, x, t, coeffs: NondimCoeffs, chunk: int = 2048) -> np.ndarray:
    """PDE residual per point, chunked so the derivative tape stays small."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(x.shape[0])
    if isinstance(net_or_partition, Partition):
        idx = subdomain_index(net_or_partition, x, t)
        for k in np.unique(idx):
            mask = idx == k
            out[mask] = eval_residuals(net_or_partition.nets[k], x[mask], t[mask], coeffs, chunk)
        return out
    for lo in range(0, x.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        bundle = eval_with_input_derivs(net_or_partition, x[sl], t[sl])
        out[sl] = pde_residual(bundle, coeffs)
    return out


def residual_grid(net_or_partition, coeffs: NondimCoeffs, n_x: int = PROFILE_NX, n_t: int = PROFILE_NT) -> np.ndarray:
    """Residual on the uniform n_x by n_t unit-square grid."""
    xs = np.linspace(0.0, 1.0, n_x)
    ts = np.linspace(0.0, 1.0, n_t)
    gx, gt = np.meshgrid(xs, ts, indexing="ij")
    r = eval_residuals(net_or_partition, gx.ravel(), gt.ravel(), coeffs)
    return r.reshape(n_x, n_t)


def profile_from_grid(grid: np.ndarray, axis: str) -> ResidualProfile:
    """Square the residual grid and average out the other axis."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("residual grid must be 2-D (n_x, n_t)")
    sq = grid**2
    values = sq.mean(axis=1) if axis == "x" else sq.mean(axis=0)
    positions = np.linspace(0.0, 1.0, values.shape[0])
    return ResidualProfile(axis=axis, positions=positions, values=values, smoothed=smooth_profile(values))


def residual_profile(net_or_partition, coeffs: NondimCoeffs, axis: str,
                     n_x: int = PROFILE_NX, n_t: int = PROFILE_NT) -> ResidualProfile:
    return profile_from_grid(residual_grid(net_or_partition, coeffs, n_x, n_t), axis)


# ---------------------------------------------------------------------------
# smoothing and feature detection

def kernel_size(n: int) -> int:
    """max(3, n//20), bumped up to odd so the window stays centered."""
    k = max(3, n // 20)
    return k + 1 if k % 2 == 0 else k


def smooth_profile(values) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at the edges.

    Symmetric shrinking keeps every window centered on its sample, so linear
    profiles pass through unchanged and no phantom peaks appear near the
    boundaries.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("profile must be a non-empty 1-D array")
    n = v.size
    half = kernel_size(n) // 2
    idx = np.arange(n)
    radius = np.minimum(half, np.minimum(idx, n - 1 - idx))
    csum = np.concatenate([[0.0], np.cumsum(v)])
    return (csum[idx + radius + 1] - csum[idx - radius]) / (2 * radius + 1)


def detect_peaks(smoothed, threshold_frac: float = 0.30,
                 exclude_frac: float = 0.10, min_sep_frac: float = 0.10) -> tuple:
    """Strict local maxima above threshold_frac of the global max.

    The outermost exclude_frac of indices on each side are ineligible, and of
    two peaks closer than min_sep_frac*n indices only the higher survives
    (leftmost on ties). Returned ascending.
    """
    v = np.asarray(smoothed, dtype=float)
    n = v.size
    if n < 3:
        return ()
    excl = int(np.floor(exclude_frac * n))
    lo, hi = max(1, excl), min(n - 2, n - 1 - excl)
    threshold = threshold_frac * float(v.max())
    candidates = [i for i in range(lo, hi + 1)
                  if v[i] > v[i - 1] and v[i] > v[i + 1] and v[i] > threshold]
    min_sep = min_sep_frac * n
    kept: list[int] = []
    for i in sorted(candidates, key=lambda j: (-v[j], j)):
        if all(abs(i - j) >= min_sep for j in kept):
            kept.append(i)
    return tuple(sorted(kept))


def select_splits(smoothed, k_peaks: int, delta_min: float = DELTA_MIN, positions=None) -> tuple:
    """k deepest valleys as split positions, or equal spacing as fallback.

    Valleys are strict local minima whose position lies in
    [delta_min, 1-delta_min]; ties break leftmost. Accepted splits keep
    delta_min between each other. Fewer accepted valleys than k drops the
    whole set in favor of equally spaced positions i/(k+1); if even those
    violate the width rule the attempt is abandoned and () is returned.
    """
    if k_peaks < 1:
        raise ValueError("split selection needs at least one peak")
    v = np.asarray(smoothed, dtype=float)
    n = v.size
    pos = np.linspace(0.0, 1.0, n) if positions is None else np.asarray(positions, dtype=float)
    tol = 1e-12
    minima = [i for i in range(1, n - 1)
              if v[i] < v[i - 1] and v[i] < v[i + 1]
              and delta_min - tol <= pos[i] <= 1.0 - delta_min + tol]
    accepted: list[float] = []
    for i in sorted(minima, key=lambda j: (v[j], j)):
        p = float(pos[i])
        if all(abs(p - q) >= delta_min - tol for q in accepted):
            accepted.append(p)
        if len(accepted) == k_peaks:
            break
    if len(accepted) < k_peaks:
        fallback = [(i + 1) / (k_peaks + 1) for i in range(k_peaks)]
        edges = [0.0, *fallback, 1.0]
        if any(b - a < delta_min - tol for a, b in zip(edges, edges[1:])):
            return ()
        return tuple(fallback)
    return tuple(sorted(accepted))


# ---------------------------------------------------------------------------
# children and warm start

def _copy_compatible(parent: PinnNetwork, child: PinnNetwork) -> int:
    """Copy parent state into every child slot with a matching shape.

    Front layers align from the input side; the output layer copies from the
    parent's output layer. Returns how many arrays were copied (Fourier map
    counted once).
    """
    copied = 0
    if parent.fourier.shape == child.fourier.shape:
        child.fourier = parent.fourier.copy()
        copied += 1
    for k in range(len(child.layers) - 1):
        if k >= len(parent.layers) - 1:
            break
        pw, pb = parent.layers[k]
        cw, cb = child.layers[k]
        if pw.shape == cw.shape and pb.shape == cb.shape:
            child.layers[k] = (pw.copy(), pb.copy())
            copied += 1
    pw, pb = parent.layers[-1]
    cw, cb = child.layers[-1]
    if pw.shape == cw.shape and pb.shape == cb.shape:
        child.layers[-1] = (pw.copy(), pb.copy())
        copied += 1
    return copied


def _flat_grads(grads) -> list:
    return [a for pair in grads.layers for a in pair]


def warm_start_child(child: PinnNetwork, parent: PinnNetwork, bounds, seed: int, child_index: int,
                     epochs: int = 200, n_points: int = 2000, lr: float = 1e-3) -> float:
    """Fit the child to the parent's output inside its own subdomain.

    Full-batch Adam on fixed uniform points. Returns the final RMS mismatch
    on those points.
    """
    (x_lo, x_hi), (t_lo, t_hi) = bounds
    rng = stream(seed, WARMSTART, child_index)
    x = rng.uniform(x_lo, x_hi, n_points)
    t = rng.uniform(t_lo, t_hi, n_points)
    target = forward(parent, x, t)
    opt = Adam(child.trainable_arrays(), lr=lr)
    for _ in range(epochs):
        bundle = eval_with_input_derivs(child, x, t, want_first=False)
        grads = backward(child, bundle, bar_u=2.0 * (bundle.u - target) / n_points)
        opt.step(_flat_grads(grads))
    return float(np.sqrt(np.mean((forward(child, x, t) - target) ** 2)))


def _build_interfaces(splits_x: tuple, splits_t: tuple, direction: str,
                      delta_shock: float, w_entropy: float, n_int: int) -> list:
    if direction == "spatial":
        return [
            InterfaceState(position=p, orientation="spatial", left=i, right=i + 1, index=i,
                           delta_shock=delta_shock, w_entropy=w_entropy, n_int=n_int)
            for i, p in enumerate(splits_x)
        ]
    if direction == "temporal":
        return [
            InterfaceState(position=p, orientation="temporal", left=i, right=i + 1, index=i,
                           delta_shock=delta_shock, w_entropy=w_entropy, n_int=n_int)
            for i, p in enumerate(splits_t)
        ]
    # spacetime 2x2: flat cell order is (x<xs,t<ts), (x<xs,t>=ts),
    # (x>=xs,t<ts), (x>=xs,t>=ts); each interface covers one segment
    xs, ts = splits_x[0], splits_t[0]
    segments = [
        ("spatial", xs, (0.0, ts), 0, 2),
        ("spatial", xs, (ts, 1.0), 1, 3),
        ("temporal", ts, (0.0, xs), 0, 1),
        ("temporal", ts, (xs, 1.0), 2, 3),
    ]
    return [
        InterfaceState(position=p, orientation=orient, left=l, right=r, index=i, span=span,
                       delta_shock=delta_shock, w_entropy=w_entropy, n_int=n_int)
        for i, (orient, p, span, l, r) in enumerate(segments)
    ]


def create_children(parent: PinnNetwork, splits_x, splits_t, child_arch: Architecture | None = None, *,
                    seed: int, warm_epochs: int = 200, warm_points: int = 2000, warm_lr: float = 1e-3,
                    delta_min: float = DELTA_MIN, delta_shock: float = 0.1,
                    w_entropy: float = 1.0, n_int: int = 200) -> Partition:
    """One warm-started child per subdomain, wired with interface states.

    Compatible layers (matching shapes, Fourier map included) are copied from
    the parent before the matching run; everything else gets a fresh seeded
    init. Interface shock speeds start at 0.
    """
    splits_x = tuple(float(s) for s in splits_x)
    splits_t = tuple(float(s) for s in splits_t)
    if splits_x and splits_t:
        direction = "spacetime"
    elif splits_x:
        direction = "spatial"
    elif splits_t:
        direction = "temporal"
    else:
        raise ValueError("children need at least one split")
    arch = child_arch if child_arch is not None else Architecture(widths=CHILD_WIDTHS)

    n_children = (len(splits_x) + 1) * (len(splits_t) + 1)
    children = []
    for i in range(n_children):
        child = init_network(arch, seed, i)
        _copy_compatible(parent, child)
        children.append(child)

    interfaces = _build_interfaces(splits_x, splits_t, direction, delta_shock, w_entropy, n_int)
    partition = Partition(direction=direction, splits_x=splits_x, splits_t=splits_t,
                          nets=children, interfaces=interfaces, delta_min=delta_min)
    for i, child in enumerate(children):
        warm_start_child(child, parent, partition.bounds(i), seed, i,
                         epochs=warm_epochs, n_points=warm_points, lr=warm_lr)
    return partition


# ---------------------------------------------------------------------------
# decision

def _axis_splits(profile: ResidualProfile, peaks: tuple, k_cap: int, delta_min: float,
                 force_attempt: bool) -> tuple:
    if peaks:
        k = min(len(peaks), k_cap)
    elif force_attempt:
        k = min(1, k_cap)
    else:
        return ()
    if k < 1:
        return ()
    return select_splits(profile.smoothed, k, delta_min=delta_min, positions=profile.positions)


def decide(obs, net, coeffs: NondimCoeffs, mode: str = "shock_screened", direction: str = "spatial", *,
           n_x: int = PROFILE_NX, n_t: int = PROFILE_NT, tau_shock: float = TAU_SHOCK,
           delta_min: float = DELTA_MIN, max_subdomains: int = 2) -> SplitDecision:
    """Split decision from the observations and the coarse network.

    shock_screened decomposes only when the indicator exceeds tau_shock and a
    residual peak exists along a requested axis; decomposition_enabled always
    attempts placement, falling back to equal spacing on flat profiles. The
    subdomain count along each 1-D direction is capped at max_subdomains; the
    spacetime direction always places one split per axis (a 2x2 grid).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    indicator = shock_indicator(obs)
    grid = residual_grid(net, coeffs, n_x=n_x, n_t=n_t)
    prof_x = profile_from_grid(grid, "x")
    prof_t = profile_from_grid(grid, "t")
    peaks_x = detect_peaks(prof_x.smoothed)
    peaks_t = detect_peaks(prof_t.smoothed)

    want_x = direction in ("spatial", "spacetime")
    want_t = direction in ("temporal", "spacetime")
    relevant_peaks = (peaks_x if want_x else ()) + (peaks_t if want_t else ())
    attempt = mode == "decomposition_enabled" or (indicator > tau_shock and bool(relevant_peaks))

    splits_x: tuple = ()
    splits_t: tuple = ()
    if attempt:
        # a 2x2 spacetime grid takes one split per axis even when only one
        # axis shows a peak; 1-D directions cap at max_subdomains cells
        force = mode == "decomposition_enabled" or direction == "spacetime"
        if want_x:
            k_cap = 1 if direction == "spacetime" else max_subdomains - 1
            splits_x = _axis_splits(prof_x, peaks_x, k_cap, delta_min, force)
        if want_t:
            k_cap = 1 if direction == "spacetime" else max_subdomains - 1
            splits_t = _axis_splits(prof_t, peaks_t, k_cap, delta_min, force)

    decomposed = attempt and (not want_x or bool(splits_x)) and (not want_t or bool(splits_t))
    if not decomposed:
        splits_x = ()
        splits_t = ()
    return SplitDecision(decomposed=decomposed, direction=direction, indicator=indicator,
                         splits_x=splits_x, splits_t=splits_t, peaks_x=peaks_x, peaks_t=peaks_t)
