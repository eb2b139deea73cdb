"""Training orchestration: baseline methods B1-B5 and the two-stage splitter B6.

One epoch is one Adam step on seeded mini-batches. All stochastic draws
flow from the run seed through the stream-splitting rule in streams.py,
so any run replays bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import backward, eval_with_input_derivs
from .decomposition import (
    DIRECTIONS,
    MODES,
    _build_interfaces,
    create_children,
    decide,
    eval_residuals,
)
from .fields import Geometry, ObservationSet, normalize
from .interfaces import interface_terms, sample_interface
from .losses import (
    CausalConfig,
    LossWeights,
    assign_bins,
    causal_weights_from_bins,
    data_loss,
    data_loss_seeds,
    pde_loss,
    pde_residual,
    residual_seeds,
    total_loss,
    viscosity_residual,
)
from .lwr import NondimCoeffs, nondim_coeffs
from .network import (
    Architecture,
    Partition,
    PinnNetwork,
    forward,
    init_network,
    piecewise_predict,
    subdomain_index,
)
from .optim import Adam, StepLR, clip_global_norm, latin_hypercube
from .streams import COLLOC, COLLOC_BATCH, DATA_BATCH, RAR, WARMSTART, stream

__all__ = [
    "CHILD_WIDTHS",
    "CausalState",
    "DEFAULT_SEEDS",
    "DESK_CHILD_WIDTHS",
    "DESK_PARENT_WIDTHS",
    "Hyperparams",
    "METHOD_IDS",
    "MethodSpec",
    "PARENT_WIDTHS",
    "TrainResult",
    "TrainingDiverged",
    "rar_refine",
    "sample_collocation",
    "train",
    "xpinn_interface_loss",
    "xpinn_interface_terms",
]

PARENT_WIDTHS = (2, 256, 128, 128, 128, 1)
CHILD_WIDTHS = (2, 256, 128, 128, 1)
DESK_PARENT_WIDTHS = (2, 128, 64, 64, 64, 1)
DESK_CHILD_WIDTHS = (2, 128, 64, 64, 1)
DEFAULT_SEEDS = (42, 123, 456, 789, 1024, 2048, 3000, 4096, 5555, 7777)
METHOD_IDS = ("B1_nn", "B2_pinn", "B3_rar", "B4_viscosity", "B5_xpinn", "B6_addpinn")
FULL_DOMAIN = ((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class MethodSpec:
    """Which estimator to train; mode/direction only steer B6_addpinn."""

    id: str
    mode: str = "shock_screened"
    direction: str = "spatial"

    def __post_init__(self):
        if self.id not in METHOD_IDS:
            raise ValueError(f"unknown method {self.id!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class Hyperparams:
    """Protocol defaults; desk() shrinks the width/point axis for CPU work."""

    epochs_total: int = 20000
    epochs_stage1: int = 5000
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-4
    steplr_step: int = 5000
    steplr_factor: float = 0.9
    clip_norm: float = 5.0
    batch_data: int = 4096
    colloc_batch_floor: int = 512
    colloc_batch_budget: int = 2048
    n_colloc: int = 50000
    rar_period: int = 2500
    rar_candidates: int = 5000
    rar_added: int = 2500
    tau_shock: float = 2.0
    delta_min: float = 0.15
    warm_epochs: int = 200
    warm_points: int = 2000
    n_int: int = 200
    delta_shock: float = 0.1
    w_entropy: float = 1.0
    s_lr: float = 1e-3
    eps_visc: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)
    causal: CausalConfig = field(default_factory=CausalConfig)
    parent_widths: tuple = PARENT_WIDTHS
    child_widths: tuple = CHILD_WIDTHS

    def __post_init__(self):
        counts = (
            "epochs_total",
            "epochs_stage1",
            "steplr_step",
            "batch_data",
            "colloc_batch_floor",
            "colloc_batch_budget",
            "n_colloc",
            "rar_period",
            "rar_candidates",
            "rar_added",
            "warm_epochs",
            "warm_points",
            "n_int",
        )
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        positives = (
            "lr_stage1",
            "lr_stage2",
            "steplr_factor",
            "clip_norm",
            "tau_shock",
            "delta_min",
            "delta_shock",
            "s_lr",
            "eps_visc",
            "w_entropy",
        )
        for name in positives:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.epochs_stage1 < self.epochs_total:
            raise ValueError("epochs_stage1 must be below epochs_total")
        if self.rar_added > self.rar_candidates:
            raise ValueError("cannot add more points than candidates")

    def batch_colloc(self, n_subdomains: int) -> int:
        """Per-subdomain collocation batch; the budget is shared across nets."""
        return max(self.colloc_batch_floor, self.colloc_batch_budget // n_subdomains)

    def scaled(self, factor: float) -> "Hyperparams":
        """Shrink the epoch axis uniformly: total, split, RAR period, lr step."""
        if not 0 < factor <= 1:
            raise ValueError("scale factor must be in (0, 1]")

        def shrink(v: int) -> int:
            return max(1, round(v * factor))

        return replace(
            self,
            epochs_total=shrink(self.epochs_total),
            epochs_stage1=shrink(self.epochs_stage1),
            rar_period=shrink(self.rar_period),
            steplr_step=shrink(self.steplr_step),
        )

    @classmethod
    def desk(cls, **overrides) -> "Hyperparams":
        """CPU-sized widths, batches and pools; schedule structure unchanged."""
        values = dict(
            batch_data=1024,
            colloc_batch_floor=128,
            colloc_batch_budget=512,
            n_colloc=12500,
            rar_candidates=1250,
            rar_added=625,
            parent_widths=DESK_PARENT_WIDTHS,
            child_widths=DESK_CHILD_WIDTHS,
        )
        values.update(overrides)
        return cls(**values)


class TrainingDiverged(RuntimeError):
    """Loss or gradients stopped being finite; .log holds the partial record."""

    def __init__(self, message: str, log: dict):
        super().__init__(message)
        self.log = log


@dataclass
class TrainResult:
    partition: Partition
    log: dict
    coarse_net: PinnNetwork | None = None
    decision: object = None


def sample_collocation(n: int, bounds, seed: int, *extra: int) -> np.ndarray:
    """Latin hypercube points inside bounds; extra ids split the seed stream."""
    rng = stream(seed, COLLOC, *extra)
    pts = latin_hypercube(n, rng)
    (x_lo, x_hi), (t_lo, t_hi) = bounds
    pts[:, 0] = x_lo + pts[:, 0] * (x_hi - x_lo)
    pts[:, 1] = t_lo + pts[:, 1] * (t_hi - t_lo)
    return pts


class CausalState:
    """Cached squared residuals over one collocation pool, binned in time.

    The cache starts at zero, so every bin weight starts at 1; each batch
    refreshes only the points it actually evaluated, keeping the per-epoch
    cost at batch size rather than pool size. Bin ids are fixed until the
    pool grows.
    """

    def __init__(self, t_values, cfg: CausalConfig):
        self.cfg = cfg
        t_values = np.asarray(t_values, dtype=float)
        self.sq = np.zeros(t_values.size)
        self.bins = assign_bins(t_values, cfg.n_bins)
        self.n_bins = int(self.bins.max()) + 1

    def record(self, indices, residuals) -> None:
        self.sq[indices] = np.square(np.asarray(residuals, dtype=float))

    def point_weights(self, indices) -> np.ndarray:
        sums = np.bincount(self.bins, weights=self.sq, minlength=self.n_bins)
        counts = np.bincount(self.bins, minlength=self.n_bins)
        weights = causal_weights_from_bins(sums / counts, self.cfg.epsilon)
        return weights[self.bins[indices]]

    def extend(self, t_values) -> None:
        """Re-bin after pool growth; new points enter with zero cached residual."""
        t_values = np.asarray(t_values, dtype=float)
        if t_values.size < self.sq.size:
            raise ValueError("pool cannot shrink")
        sq = np.zeros(t_values.size)
        sq[: self.sq.size] = self.sq
        self.sq = sq
        self.bins = assign_bins(t_values, self.cfg.n_bins)
        self.n_bins = int(self.bins.max()) + 1


def _allocate(total: int, areas) -> np.ndarray:
    """Largest-remainder apportionment of total points over subdomain areas."""
    areas = np.asarray(areas, dtype=float)
    raw = total * areas / areas.sum()
    base = np.floor(raw).astype(int)
    short = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def rar_refine(nets, pools, bounds_list, coeffs: NondimCoeffs, hyper: Hyperparams,
               seed: int, round_index: int) -> list:
    """Append the rar_added largest-|r| points per pool from fresh candidates."""
    for k, (net, bounds) in enumerate(zip(nets, bounds_list)):
        rng = stream(seed, RAR, round_index, k)
        cand = rng.uniform(size=(hyper.rar_candidates, 2))
        (x_lo, x_hi), (t_lo, t_hi) = bounds
        cand[:, 0] = x_lo + cand[:, 0] * (x_hi - x_lo)
        cand[:, 1] = t_lo + cand[:, 1] * (t_hi - t_lo)
        r = eval_residuals(net, cand[:, 0], cand[:, 1], coeffs)
        keep = np.argsort(-np.abs(r), kind="stable")[: hyper.rar_added]
        pools[k] = np.vstack([pools[k], cand[keep]])
    return pools


def xpinn_interface_terms(partition: Partition, coeffs: NondimCoeffs,
                          seed: int, step: int) -> tuple:
    """Residual-continuity plus solution-average coupling over all segments.

    Per segment: mean squared difference of the two adjacent residuals at
    shared samples, plus the mean squared deviation of each net's value
    from the two-net average. Returns the unweighted sum and per-net
    GradientSets; the trainer applies the interface loss weight.
    """
    if not partition.interfaces:
        raise ValueError("partition has no interfaces")
    total = 0.0
    net_grads: dict = {}
    for state in partition.interfaces:
        samples = sample_interface(state, seed, step)
        if state.orientation == "spatial":
            xs = np.full(samples.shape, state.position)
            ts = samples
        else:
            xs = samples
            ts = np.full(samples.shape, state.position)
        n = samples.size
        bl = eval_with_input_derivs(partition.nets[state.left], xs, ts)
        br = eval_with_input_derivs(partition.nets[state.right], xs, ts)
        rl = pde_residual(bl, coeffs)
        rr = pde_residual(br, coeffs)
        du = bl.u - br.u
        total += float(np.mean((rl - rr) ** 2) + 0.5 * np.mean(du**2))
        # deviations from the average contribute (du/2)^2 twice per sample
        c = 2.0 * (rl - rr) / n
        seeds_l = {
            "bar_u": c * (-coeffs.B * bl.du_dx) / coeffs.scale + du / n,
            "bar_du_dx": c * (coeffs.A - coeffs.B * bl.u) / coeffs.scale,
            "bar_du_dt": -c / coeffs.scale,
        }
        seeds_r = {
            "bar_u": -c * (-coeffs.B * br.du_dx) / coeffs.scale - du / n,
            "bar_du_dx": -c * (coeffs.A - coeffs.B * br.u) / coeffs.scale,
            "bar_du_dt": c / coeffs.scale,
        }
        for idx, bundle, seeds in ((state.left, bl, seeds_l), (state.right, br, seeds_r)):
            _accumulate(net_grads, idx, backward(partition.nets[idx], bundle, **seeds))
    return total, net_grads


def xpinn_interface_loss(partition: Partition, coeffs: NondimCoeffs,
                         seed: int, step: int) -> float:
    return xpinn_interface_terms(partition, coeffs, seed, step)[0]


def _accumulate(grads: dict, key: int, g, scale: float = 1.0) -> None:
    if key in grads:
        grads[key].add_(g, scale)
    elif scale == 1.0:
        grads[key] = g
    else:
        grads[key] = g * scale


def _all_arrays(nets) -> list:
    return [a for net in nets for a in net.trainable_arrays()]


def _flatten_grads(nets, grads: dict) -> list:
    flat = []
    for k, net in enumerate(nets):
        g = grads.get(k)
        if g is None:
            flat.extend(np.zeros_like(a) for a in net.trainable_arrays())
        else:
            for gw, gb in g.layers:
                flat.append(gw)
                flat.append(gb)
    return flat


def _data_arrays(obs: ObservationSet, geometry: Geometry) -> tuple:
    x = geometry.cell_to_xhat(obs.cells)
    t = geometry.step_to_that(obs.steps)
    u = normalize(obs.speeds, obs.stats)
    return x, t, u


def _data_step(partition: Partition, x, t, u, batch_size: int, seed: int,
               epoch: int, w_data: float, grads: dict) -> float:
    rng = stream(seed, DATA_BATCH, epoch)
    take = min(batch_size, x.size)
    idx = rng.choice(x.size, size=take, replace=False)
    xb, tb, ub = x[idx], t[idx], u[idx]
    owner = subdomain_index(partition, xb, tb)
    preds = np.empty(take)
    held = []
    for k, net in enumerate(partition.nets):
        mask = owner == k
        if not mask.any():
            continue
        bundle = eval_with_input_derivs(net, xb[mask], tb[mask], want_first=False)
        preds[mask] = bundle.u
        held.append((k, mask, bundle))
    loss = data_loss(preds, ub)
    bar = w_data * data_loss_seeds(preds, ub)
    for k, mask, bundle in held:
        _accumulate(grads, k, backward(partition.nets[k], bundle, bar_u=bar[mask]))
    return loss


def _pde_step(nets, pools, causal_states, coeffs: NondimCoeffs, hyper: Hyperparams,
              seed: int, epoch: int, viscous: bool, w_pde: float, grads: dict) -> float:
    n_sub = len(nets)
    take = hyper.batch_colloc(n_sub)
    eps = hyper.eps_visc if viscous else None
    parts = []
    for k, net in enumerate(nets):
        pool = pools[k]
        rng = stream(seed, COLLOC_BATCH, epoch, k)
        idx = rng.choice(pool.shape[0], size=min(take, pool.shape[0]), replace=False)
        pts = pool[idx]
        bundle = eval_with_input_derivs(net, pts[:, 0], pts[:, 1], want_second=viscous)
        r = viscosity_residual(bundle, coeffs, eps) if viscous else pde_residual(bundle, coeffs)
        if causal_states is None:
            w = 1.0
        else:
            causal_states[k].record(idx, r)
            w = causal_states[k].point_weights(idx)
        parts.append((r, w))
        seeds = residual_seeds(bundle, coeffs, r, w, eps_visc=eps, prefactor=w_pde / n_sub)
        _accumulate(grads, k, backward(net, bundle, **seeds))
    return pde_loss(parts)


def _new_log(spec: MethodSpec, seed: int, pde: bool, interface: bool) -> dict:
    parts: dict = {"data": []}
    if pde:
        parts["pde"] = []
    if interface:
        parts["interface"] = []
    return {
        "method": spec.id,
        "seed": seed,
        "mode": spec.mode,
        "direction": spec.direction,
        "decomposition": {"decided": False, "S": None, "splits": {"x": [], "t": []}},
        "losses": [],
        "loss_parts": parts,
        "lr": [],
        "pool_sizes": {"initial": 0, "final": 0, "rar_rounds": 0},
        "time_s": None,
    }


def _log_epoch(log: dict, total: float, lr: float, **parts) -> None:
    log["losses"].append(float(total))
    log["lr"].append(float(lr))
    for name, value in parts.items():
        log["loss_parts"][name].append(float(value))


def _abort_if_bad(log: dict, started: float, lr: float, **parts) -> None:
    if all(np.isfinite(v) for v in parts.values()):
        return
    _log_epoch(log, float("nan"), lr, **parts)
    log["time_s"] = time.perf_counter() - started
    raise TrainingDiverged(f"non-finite loss at epoch {len(log['losses']) - 1}", log)


def _step_or_abort(adam: Adam, flat: list, log: dict, started: float) -> None:
    try:
        adam.step(flat)
    except ValueError as exc:
        log["time_s"] = time.perf_counter() - started
        raise TrainingDiverged(f"{exc} at epoch {len(log['losses']) - 1}", log) from exc


def _warm_start_gap(partition: Partition, parent: PinnNetwork, seed: int,
                    n_points: int = 1000) -> float:
    # measurement stream id sits one past the last child's warm-start id
    rng = stream(seed, WARMSTART, len(partition.nets))
    pts = rng.uniform(size=(n_points, 2))
    gap = piecewise_predict(partition, pts[:, 0], pts[:, 1]) - forward(parent, pts[:, 0], pts[:, 1])
    return float(np.sqrt(np.mean(gap**2)))


def _train_single(spec: MethodSpec, obs: ObservationSet, geometry: Geometry,
                  hyper: Hyperparams, seed: int) -> TrainResult:
    """B1-B4: one parent-arch network, constant lr, optional RAR/viscosity."""
    w = hyper.weights
    coeffs = nondim_coeffs(obs.stats, geometry.x_range, geometry.t_range)
    x, t, u = _data_arrays(obs, geometry)
    net = init_network(Architecture(hyper.parent_widths), seed)
    partition = Partition(direction="spatial", splits_x=(), splits_t=(), nets=[net])
    uses_pde = spec.id != "B1_nn"
    viscous = spec.id == "B4_viscosity"
    adaptive = spec.id == "B3_rar"
    pools = [sample_collocation(hyper.n_colloc, FULL_DOMAIN, seed, 1)] if uses_pde else []
    bounds_list = [FULL_DOMAIN]
    adam = Adam(net.trainable_arrays(), hyper.lr_stage1)
    log = _new_log(spec, seed, pde=uses_pde, interface=False)
    if uses_pde:
        log["pool_sizes"]["initial"] = hyper.n_colloc
    rounds = 0
    started = time.perf_counter()
    for epoch in range(hyper.epochs_total):
        if adaptive and 0 < epoch and epoch % hyper.rar_period == 0:
            rar_refine([net], pools, bounds_list, coeffs, hyper, seed, rounds)
            rounds += 1
        grads: dict = {}
        l_data = _data_step(partition, x, t, u, hyper.batch_data, seed, epoch, w.w_data, grads)
        if uses_pde:
            l_pde = _pde_step([net], pools, None, coeffs, hyper, seed, epoch, viscous, w.w_pde, grads)
            _abort_if_bad(log, started, adam.lr, data=l_data, pde=l_pde)
            _log_epoch(log, total_loss(l_data, l_pde, 0.0, w), adam.lr, data=l_data, pde=l_pde)
        else:
            _abort_if_bad(log, started, adam.lr, data=l_data)
            _log_epoch(log, w.w_data * l_data, adam.lr, data=l_data)
        _step_or_abort(adam, _flatten_grads([net], grads), log, started)
    log["time_s"] = time.perf_counter() - started
    if uses_pde:
        log["pool_sizes"].update(final=int(pools[0].shape[0]), rar_rounds=rounds)
    return TrainResult(partition=partition, log=log)


def _train_xpinn(spec: MethodSpec, obs: ObservationSet, geometry: Geometry,
                 hyper: Hyperparams, seed: int) -> TrainResult:
    """B5: four child-arch subnets on a fixed 2x2 split, coupled from epoch 0."""
    w = hyper.weights
    coeffs = nondim_coeffs(obs.stats, geometry.x_range, geometry.t_range)
    x, t, u = _data_arrays(obs, geometry)
    arch = Architecture(hyper.child_widths)
    nets = [init_network(arch, seed, k) for k in range(4)]
    interfaces = _build_interfaces((0.5,), (0.5,), "spacetime",
                                   hyper.delta_shock, hyper.w_entropy, hyper.n_int)
    partition = Partition(direction="spacetime", splits_x=(0.5,), splits_t=(0.5,),
                          nets=nets, interfaces=interfaces, delta_min=hyper.delta_min)
    bounds_list = [partition.bounds(k) for k in range(4)]
    areas = [(xb[1] - xb[0]) * (tb[1] - tb[0]) for xb, tb in bounds_list]
    counts = _allocate(hyper.n_colloc, areas)
    pools = [sample_collocation(int(counts[k]), bounds_list[k], seed, 1, k) for k in range(4)]
    adam = Adam(_all_arrays(nets), hyper.lr_stage1)
    schedule = StepLR(hyper.lr_stage1, hyper.steplr_step, hyper.steplr_factor)
    log = _new_log(spec, seed, pde=True, interface=True)
    log["decomposition"]["splits"] = {"x": [0.5], "t": [0.5]}
    log["pool_sizes"]["initial"] = int(counts.sum())
    started = time.perf_counter()
    for epoch in range(hyper.epochs_total):
        adam.lr = schedule.lr_at(epoch)
        grads: dict = {}
        l_data = _data_step(partition, x, t, u, hyper.batch_data, seed, epoch, w.w_data, grads)
        l_pde = _pde_step(nets, pools, None, coeffs, hyper, seed, epoch, False, w.w_pde, grads)
        l_int, int_grads = xpinn_interface_terms(partition, coeffs, seed, epoch)
        for k, g in int_grads.items():
            _accumulate(grads, k, g, w.w_int)
        _abort_if_bad(log, started, adam.lr, data=l_data, pde=l_pde, interface=l_int)
        _log_epoch(log, total_loss(l_data, l_pde, l_int, w), adam.lr,
                   data=l_data, pde=l_pde, interface=l_int)
        flat = _flatten_grads(nets, grads)
        clip_global_norm(flat, hyper.clip_norm)
        _step_or_abort(adam, flat, log, started)
    log["time_s"] = time.perf_counter() - started
    log["pool_sizes"]["final"] = int(sum(p.shape[0] for p in pools))
    return TrainResult(partition=partition, log=log)


def _train_addpinn(spec: MethodSpec, obs: ObservationSet, geometry: Geometry,
                   hyper: Hyperparams, seed: int) -> TrainResult:
    """B6: causal coarse stage, split decision, warm-started refined stage."""
    w = hyper.weights
    coeffs = nondim_coeffs(obs.stats, geometry.x_range, geometry.t_range)
    x, t, u = _data_arrays(obs, geometry)
    parent = init_network(Architecture(hyper.parent_widths), seed)
    partition = Partition(direction="spatial", splits_x=(), splits_t=(), nets=[parent])
    pools = [sample_collocation(hyper.n_colloc, FULL_DOMAIN, seed, 1)]
    causal = [CausalState(pools[0][:, 1], hyper.causal)]
    adam = Adam(parent.trainable_arrays(), hyper.lr_stage1)
    log = _new_log(spec, seed, pde=True, interface=True)
    log["pool_sizes"]["initial"] = hyper.n_colloc
    started = time.perf_counter()
    for epoch in range(hyper.epochs_stage1):
        grads: dict = {}
        l_data = _data_step(partition, x, t, u, hyper.batch_data, seed, epoch, w.w_data, grads)
        l_pde = _pde_step([parent], pools, causal, coeffs, hyper, seed, epoch, False, w.w_pde, grads)
        _abort_if_bad(log, started, hyper.lr_stage1, data=l_data, pde=l_pde, interface=0.0)
        _log_epoch(log, total_loss(l_data, l_pde, 0.0, w), hyper.lr_stage1,
                   data=l_data, pde=l_pde, interface=0.0)
        flat = _flatten_grads([parent], grads)
        clip_global_norm(flat, hyper.clip_norm)
        _step_or_abort(adam, flat, log, started)
    log["stage1_last_loss"] = log["losses"][-1]
    coarse = parent.copy()
    decision = decide(obs, parent, coeffs, mode=spec.mode, direction=spec.direction,
                      tau_shock=hyper.tau_shock, delta_min=hyper.delta_min,
                      max_subdomains=2)
    log["decomposition"] = {
        "decided": bool(decision.decomposed),
        "S": float(decision.indicator),
        "splits": {"x": list(decision.splits_x), "t": list(decision.splits_t)},
        "direction": decision.direction,
        "peaks": {"x": list(decision.peaks_x), "t": list(decision.peaks_t)},
    }
    if decision.decomposed:
        partition = create_children(parent, decision.splits_x, decision.splits_t,
                                    Architecture(hyper.child_widths), seed=seed,
                                    warm_epochs=hyper.warm_epochs,
                                    warm_points=hyper.warm_points,
                                    delta_min=hyper.delta_min,
                                    delta_shock=hyper.delta_shock,
                                    w_entropy=hyper.w_entropy, n_int=hyper.n_int)
        log["warm_start_rms"] = _warm_start_gap(partition, parent, seed)
    else:
        log["note"] = "single-domain fallback"
    nets = list(partition.nets)
    n_sub = len(nets)
    bounds_list = [partition.bounds(k) for k in range(n_sub)]
    areas = [(xb[1] - xb[0]) * (tb[1] - tb[0]) for xb, tb in bounds_list]
    counts = _allocate(hyper.n_colloc, areas)
    pools = [sample_collocation(int(counts[k]), bounds_list[k], seed, 2, k)
             for k in range(n_sub)]
    causal = [CausalState(pools[k][:, 1], hyper.causal) for k in range(n_sub)]
    adam = Adam(_all_arrays(nets), hyper.lr_stage2)
    schedule = StepLR(hyper.lr_stage2, hyper.steplr_step, hyper.steplr_factor)
    log["s_trajectory"] = {st.index: [] for st in partition.interfaces
                           if st.orientation == "spatial"}
    log["classification"] = {st.index: [] for st in partition.interfaces}
    rounds = 0
    first_stage2 = len(log["losses"])
    for epoch in range(hyper.epochs_stage1, hyper.epochs_total):
        if epoch > hyper.epochs_stage1 and epoch % hyper.rar_period == 0:
            rar_refine(nets, pools, bounds_list, coeffs, hyper, seed, rounds)
            rounds += 1
            for k in range(n_sub):
                causal[k].extend(pools[k][:, 1])
        adam.lr = schedule.lr_at(epoch - hyper.epochs_stage1)
        grads = {}
        l_data = _data_step(partition, x, t, u, hyper.batch_data, seed, epoch, w.w_data, grads)
        l_pde = _pde_step(nets, pools, causal, coeffs, hyper, seed, epoch, False, w.w_pde, grads)
        if partition.interfaces:
            l_int, int_grads, s_grads = interface_terms(partition, seed, epoch)
            for k, g in int_grads.items():
                _accumulate(grads, k, g, w.w_int)
        else:
            l_int, s_grads = 0.0, {}
        _abort_if_bad(log, started, adam.lr, data=l_data, pde=l_pde, interface=l_int)
        _log_epoch(log, total_loss(l_data, l_pde, l_int, w), adam.lr,
                   data=l_data, pde=l_pde, interface=l_int)
        flat = _flatten_grads(nets, grads)
        weighted_s = {idx: w.w_int * ds for idx, ds in s_grads.items()}
        scale = clip_global_norm(flat, hyper.clip_norm,
                                 extra_sq=sum(v * v for v in weighted_s.values()))
        _step_or_abort(adam, flat, log, started)
        for state in partition.interfaces:
            if state.orientation == "spatial":
                state.s -= hyper.s_lr * scale * weighted_s[state.index]
                log["s_trajectory"][state.index].append(float(state.s))
            log["classification"][state.index].append(state.classification)
    log["stage2_first_loss"] = log["losses"][first_stage2]
    log["time_s"] = time.perf_counter() - started
    log["pool_sizes"].update(final=int(sum(p.shape[0] for p in pools)), rar_rounds=rounds)
    return TrainResult(partition=partition, log=log, coarse_net=coarse, decision=decision)


def train(method, obs: ObservationSet, geometry: Geometry,
          hyper: Hyperparams | None = None, seed: int = 42) -> TrainResult:
    """Run one estimator end to end. method is a MethodSpec or a method id."""
    spec = MethodSpec(method) if isinstance(method, str) else method
    if hyper is None:
        hyper = Hyperparams()
    if spec.id == "B6_addpinn":
        return _train_addpinn(spec, obs, geometry, hyper, seed)
    if spec.id == "B5_xpinn":
        return _train_xpinn(spec, obs, geometry, hyper, seed)
    return _train_single(spec, obs, geometry, hyper, seed)
