"""Dense speed fields, sparse sensor observations, and normalization.

A SpeedField samples u(x, t) in mph on a regular grid: entry (i, j) is the
speed at normalized coordinates (i/(n_cells-1), j/(n_steps-1)), which map to
physical position x_min + x_hat*(x_max - x_min) feet and time t_hat*t_range
seconds. Ground truth, predictions, and synthetic oracle output all share
this layout, so everything downstream is source-agnostic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpeedField",
    "Geometry",
    "NormStats",
    "ObservationSet",
    "compute_stats",
    "normalize",
    "denormalize",
    "place_sensors",
    "extract_observations",
    "read_field_csv",
    "write_field_csv",
    "read_observations_json",
    "write_observations_json",
]


@dataclass(frozen=True)
class Geometry:
    """Grid extents of a speed field: feet for space, seconds for time."""

    x_min: float
    x_max: float
    t_range: float
    n_cells: int
    n_steps: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.t_range > 0:
            raise ValueError("t_range must be positive")
        if self.n_cells < 2 or self.n_steps < 2:
            raise ValueError("need at least a 2x2 grid")

    @property
    def x_range(self) -> float:
        return self.x_max - self.x_min

    def cell_to_xhat(self, cells) -> np.ndarray:
        return np.asarray(cells, dtype=float) / (self.n_cells - 1)

    def step_to_that(self, steps) -> np.ndarray:
        return np.asarray(steps, dtype=float) / (self.n_steps - 1)


@dataclass(frozen=True)
class SpeedField:
    """Dense speed grid in mph with its physical extents."""

    values: np.ndarray
    x_min: float
    x_max: float
    t_range: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("values must be a 2-D (n_cells, n_steps) array")
        if not np.all(np.isfinite(values)):
            raise ValueError("speeds must be finite")
        if np.any(values < 0):
            raise ValueError("speeds must be non-negative")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.t_range > 0:
            raise ValueError("t_range must be positive")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.x_min, self.x_max, self.t_range, self.n_cells, self.n_steps)


@dataclass(frozen=True)
class NormStats:
    """Min-max speed range plus the free-flow speed estimate, all mph."""

    u_min: float
    u_max: float
    v_f: float

    def __post_init__(self):
        if not self.u_max > self.u_min:
            raise ValueError("degenerate field: u_max must exceed u_min")
        if not self.u_min <= self.v_f <= self.u_max:
            raise ValueError("v_f must lie within [u_min, u_max]")


@dataclass(frozen=True)
class ObservationSet:
    """Full time series at each sensor cell, in mph, with the field's stats.

    records are sorted by (cell, step); cells/steps/speeds are parallel arrays.
    """

    sensor_cells: tuple
    cells: np.ndarray
    steps: np.ndarray
    speeds: np.ndarray
    stats: NormStats

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64)
        steps = np.asarray(self.steps, dtype=np.int64)
        speeds = np.asarray(self.speeds, dtype=float)
        if not (cells.shape == steps.shape == speeds.shape) or cells.ndim != 1:
            raise ValueError("cells, steps, speeds must be parallel 1-D arrays")
        order = np.lexsort((steps, cells))
        cells, steps, speeds = cells[order], steps[order], speeds[order]
        sensor_cells = tuple(int(c) for c in self.sensor_cells)
        if set(np.unique(cells)) - set(sensor_cells):
            raise ValueError("records reference cells outside sensor_cells")
        for arr in (cells, steps, speeds):
            arr.flags.writeable = False
        object.__setattr__(self, "sensor_cells", sensor_cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "speeds", speeds)

    def __len__(self) -> int:
        return self.cells.shape[0]

    def series(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        """Time steps and speeds recorded at one sensor cell."""
        mask = self.cells == cell
        return self.steps[mask], self.speeds[mask]


def compute_stats(field: SpeedField, percentile: float = 0.95) -> NormStats:
    """Field extrema plus the free-flow speed at the given percentile.

    The percentile uses linear interpolation between order statistics and is
    taken over the full field, matching the offline protocol under which the
    normalization range is known ahead of training.
    """
    if not 0 < percentile <= 1:
        raise ValueError("percentile must be in (0, 1]")
    values = field.values
    u_min = float(values.min())
    u_max = float(values.max())
    if u_max == u_min:
        raise ValueError("degenerate field: u_max == u_min, normalization undefined")
    v_f = float(np.quantile(values, percentile, method="linear"))
    return NormStats(u_min=u_min, u_max=u_max, v_f=v_f)


def normalize(values, stats: NormStats) -> np.ndarray:
    """Map speeds in mph to [0, 1] via min-max scaling."""
    return (np.asarray(values, dtype=float) - stats.u_min) / (stats.u_max - stats.u_min)


def denormalize(values_hat, stats: NormStats) -> np.ndarray:
    """Inverse of normalize."""
    return stats.u_min + np.asarray(values_hat, dtype=float) * (stats.u_max - stats.u_min)


def place_sensors(n_cells: int, n_s: int) -> tuple:
    """Equally spaced interior sensor cells.

    n_s + 2 equally spaced reals span [0, n_cells - 1]; the endpoints are
    dropped and the interior values rounded half-to-even. Raises if rounding
    collides two sensors (grid too coarse for the requested count).
    """
    if n_s < 1:
        raise ValueError("need at least one sensor")
    if n_cells < n_s + 2:
        raise ValueError("n_cells must be at least n_s + 2")
    raw = np.linspace(0.0, n_cells - 1, n_s + 2)[1:-1]
    cells = np.rint(raw).astype(int)
    if len(set(cells.tolist())) != n_s:
        raise ValueError("duplicate sensor indices after rounding; lower n_s")
    return tuple(int(c) for c in cells)


def extract_observations(field: SpeedField, sensors, percentile: float = 0.95) -> ObservationSet:
    """Full per-sensor time series plus normalization stats from the field."""
    n_cells, n_steps = field.values.shape
    sensors = tuple(int(c) for c in sensors)
    for c in sensors:
        if not 0 < c < n_cells - 1:
            raise ValueError(f"sensor cell {c} is not strictly interior")
    stats = compute_stats(field, percentile)
    cells = np.repeat(np.array(sensors, dtype=np.int64), n_steps)
    steps = np.tile(np.arange(n_steps, dtype=np.int64), len(sensors))
    speeds = field.values[cells, steps]
    return ObservationSet(sensor_cells=sensors, cells=cells, steps=steps, speeds=speeds, stats=stats)


# ---------------------------------------------------------------------------
# file formats

def write_field_csv(field: SpeedField, path) -> None:
    """Header line `# x_min_ft,x_max_ft,t_range_s,n_cells,n_steps`, then one
    line of comma-separated mph values per cell."""
    with open(path, "w") as fh:
        fh.write(f"# {field.x_min!r},{field.x_max!r},{field.t_range!r},{field.n_cells},{field.n_steps}\n")
        np.savetxt(fh, field.values, delimiter=",", fmt="%.10g")


def read_field_csv(path) -> SpeedField:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("missing metadata header line")
        parts = header.lstrip("#").strip().split(",")
        if len(parts) != 5:
            raise ValueError("header must hold x_min_ft,x_max_ft,t_range_s,n_cells,n_steps")
        x_min, x_max, t_range = (float(p) for p in parts[:3])
        n_cells, n_steps = int(parts[3]), int(parts[4])
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    if values.shape != (n_cells, n_steps):
        raise ValueError(f"expected {(n_cells, n_steps)} values, found {values.shape}")
    return SpeedField(values=values, x_min=x_min, x_max=x_max, t_range=t_range)


def write_observations_json(obs: ObservationSet, path) -> None:
    doc = {
        "sensors": list(obs.sensor_cells),
        "stats": {"u_min": obs.stats.u_min, "u_max": obs.stats.u_max, "v_f": obs.stats.v_f},
        "records": [[int(c), int(s), float(u)] for c, s, u in zip(obs.cells, obs.steps, obs.speeds)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_observations_json(path) -> ObservationSet:
    with open(path) as fh:
        doc = json.load(fh)
    records = np.asarray(doc["records"], dtype=float)
    if records.size == 0:
        records = records.reshape(0, 3)
    stats = NormStats(**doc["stats"])
    return ObservationSet(
        sensor_cells=tuple(int(c) for c in doc["sensors"]),
        cells=records[:, 0].astype(np.int64),
        steps=records[:, 1].astype(np.int64),
        speeds=records[:, 2],
        stats=stats,
    )
