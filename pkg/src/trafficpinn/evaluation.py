"""Error metrics in physical units and cross-configuration aggregation.

All field metrics run in mph; reconstructions are denormalized before they
reach this module. Aggregation pairs methods per configuration and reports
win/loss counts plus mean-difference statistics over the shared seed set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

ZONE_BOUNDS_MPH = (30.0, 55.0)  # congested below, free above, transition between


def _values(f) -> np.ndarray:
    arr = np.asarray(getattr(f, "values", f), dtype=float)
    if arr.size == 0:
        raise ValueError("empty field")
    return arr


@dataclass(frozen=True)
class EvalReport:
    rel_l2_pct: float
    rmse_mph: float
    mae_mph: float
    zone_mae_mph: dict = field(default_factory=dict)
    train_time_s: float = 0.0

    def __post_init__(self):
        for name in ("rel_l2_pct", "rmse_mph", "mae_mph", "train_time_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")
        if any(v < 0 for v in self.zone_mae_mph.values()):
            raise ValueError("zone MAE cannot be negative")

    def to_dict(self) -> dict:
        return {
            "rel_l2_pct": self.rel_l2_pct,
            "rmse_mph": self.rmse_mph,
            "mae_mph": self.mae_mph,
            "zone_mae_mph": dict(self.zone_mae_mph),
            "train_time_s": self.train_time_s,
        }


def relative_l2(pred, truth) -> float:
    """100 * ||pred - truth||_2 / ||truth||_2 over all grid points, in mph."""
    p, g = _values(pred), _values(truth)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    denom = float(np.linalg.norm(g))
    if denom == 0.0:
        raise ValueError("truth field has zero norm")
    return 100.0 * float(np.linalg.norm(p - g)) / denom


def rmse_mae(pred, truth) -> tuple[float, float, dict]:
    """RMSE, MAE, and per-zone MAE keyed by the truth speed.

    Zones: congested < 30 mph, transition 30..55 mph, free > 55 mph. A zone
    with no grid points is left out of the map.
    """
    p, g = _values(pred), _values(truth)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    err = p - g
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    lo, hi = ZONE_BOUNDS_MPH
    masks = {
        "congested": g < lo,
        "transition": (g >= lo) & (g <= hi),
        "free": g > hi,
    }
    zone_mae = {name: float(np.mean(np.abs(err[m]))) for name, m in masks.items() if m.any()}
    return rmse, mae, zone_mae


def evaluate(pred, truth, train_time_s: float = 0.0) -> EvalReport:
    rmse, mae, zones = rmse_mae(pred, truth)
    return EvalReport(
        rel_l2_pct=relative_l2(pred, truth),
        rmse_mph=rmse,
        mae_mph=mae,
        zone_mae_mph=zones,
        train_time_s=train_time_s,
    )


# ---------------------------------------------------------------------------
# aggregation

@dataclass(frozen=True)
class PairedStats:
    """Paired comparison of two methods across configurations.

    delta is mean(a - b) over per-config seed means, so negative favours a
    when the metric is an error. cohens_d is +-inf when every diff is equal
    and nonzero (zero spread); t/p/ci are None when fewer than two configs
    make the spread undefined.
    """

    method_a: str
    method_b: str
    n_configs: int
    wins_a: int
    wins_b: int
    delta: float
    ci95_half: float | None
    t_stat: float | None
    p_value: float | None
    cohens_d: float


@dataclass(frozen=True)
class AggregateReport:
    config_means: dict   # (method, config) -> mean over seeds
    config_stds: dict    # (method, config) -> std over seeds (ddof=1; 0 for one seed)
    pairwise: dict       # (method_a, method_b) -> PairedStats, a < b lexically


def _paired(diffs: np.ndarray) -> tuple[float | None, float | None, float | None, float]:
    n = diffs.size
    delta = float(np.mean(diffs))
    if n < 2:
        return None, None, None, _effect(delta, 0.0)
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        return None, None, None, _effect(delta, 0.0)
    se = sd / math.sqrt(n)
    t_stat = delta / se
    p = 2.0 * float(sstats.t.sf(abs(t_stat), n - 1))
    ci_half = float(sstats.t.ppf(0.975, n - 1)) * se
    return ci_half, t_stat, p, delta / sd


def _effect(delta: float, sd: float) -> float:
    if sd > 0:
        return delta / sd
    if delta == 0.0:
        return 0.0
    return math.copysign(math.inf, delta)


def aggregate(results: dict) -> AggregateReport:
    """results: {(method, config, seed): metric}. Lower metric is better.

    Every method must cover the identical (config, seed) grid; anything else
    raises, because paired statistics over mismatched cells would be silently
    wrong.
    """
    if not results:
        raise ValueError("no results to aggregate")
    cells: dict[str, set] = {}
    for method, config, seed in results:
        cells.setdefault(method, set()).add((config, seed))
    methods = sorted(cells)
    reference = cells[methods[0]]
    for m in methods[1:]:
        if cells[m] != reference:
            raise ValueError(f"unbalanced seed/config sets: {m} does not match {methods[0]}")

    configs = sorted({c for c, _ in reference})
    seeds = sorted({s for _, s in reference})
    config_means = {}
    config_stds = {}
    for m in methods:
        for c in configs:
            vals = np.array([results[(m, c, s)] for s in seeds], dtype=float)
            config_means[(m, c)] = float(np.mean(vals))
            config_stds[(m, c)] = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0

    pairwise = {}
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            mean_a = np.array([config_means[(a, c)] for c in configs])
            mean_b = np.array([config_means[(b, c)] for c in configs])
            diffs = mean_a - mean_b
            wins_a = int(np.sum(mean_a < mean_b))
            wins_b = int(np.sum(mean_b < mean_a))
            ci_half, t_stat, p, d = _paired(diffs)
            pairwise[(a, b)] = PairedStats(
                method_a=a, method_b=b, n_configs=len(configs),
                wins_a=wins_a, wins_b=wins_b, delta=float(np.mean(diffs)),
                ci95_half=ci_half, t_stat=t_stat, p_value=p, cohens_d=d,
            )
    return AggregateReport(config_means=config_means, config_stds=config_stds, pairwise=pairwise)
