"""Kinematic-wave traffic model under a Greenshields fundamental diagram.

Provides the flux q(rho) = v_f rho (1 - rho/rho_jam), its characteristic and
Rankine-Hugoniot shock speeds, the dimensionless coefficients that scale the
speed-form PDE residual, and an explicit Godunov finite-volume solver used as
an independent oracle for synthetic ground-truth speed fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fields import NormStats, SpeedField

__all__ = [
    "FundamentalDiagram",
    "NORMALIZED_FD",
    "NondimCoeffs",
    "Scenario",
    "MPH_TO_FPS",
    "flow",
    "characteristic_speed",
    "rh_shock_speed",
    "nondim_coeffs",
    "godunov_flux",
    "godunov_evolve",
    "godunov_solve",
    "initial_density",
    "scenario_from_dict",
    "scenario_from_json",
]

MPH_TO_FPS = 5280.0 / 3600.0


@dataclass(frozen=True)
class FundamentalDiagram:
    """Greenshields parameters. Units are the caller's (normalized or mph)."""

    v_f: float
    rho_jam: float

    def __post_init__(self):
        if not self.v_f > 0:
            raise ValueError("v_f must be positive")
        if not self.rho_jam > 0:
            raise ValueError("rho_jam must be positive")


NORMALIZED_FD = FundamentalDiagram(v_f=1.0, rho_jam=1.0)


@dataclass(frozen=True)
class NondimCoeffs:
    """Dimensionless coefficients of the normalized speed-form PDE residual."""

    A: float
    B: float
    C: float

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.B > 0:
            raise ValueError("B must be positive")

    @property
    def scale(self) -> float:
        """Euclidean norm of the residual coefficient vector (A, B, 1)."""
        return float(np.sqrt(self.A**2 + self.B**2 + 1.0))


def _check_density(fd: FundamentalDiagram, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > fd.rho_jam):
        raise ValueError("density outside [0, rho_jam]")
    return rho


def flow(fd: FundamentalDiagram, rho):
    """Greenshields flux q = v_f rho (1 - rho/rho_jam)."""
    rho = _check_density(fd, rho)
    return fd.v_f * rho * (1.0 - rho / fd.rho_jam)


def characteristic_speed(fd: FundamentalDiagram, rho):
    """Wave speed q'(rho) = v_f (1 - 2 rho/rho_jam)."""
    rho = _check_density(fd, rho)
    return fd.v_f * (1.0 - 2.0 * rho / fd.rho_jam)


def rh_shock_speed(fd: FundamentalDiagram, rho_l, rho_r):
    """Rankine-Hugoniot speed s = (q_l - q_r)/(rho_l - rho_r).

    For Greenshields this collapses to v_f (1 - (rho_l + rho_r)/rho_jam).
    """
    rho_l = _check_density(fd, rho_l)
    rho_r = _check_density(fd, rho_r)
    if np.any(np.abs(rho_l - rho_r) <= 1e-12):
        raise ValueError("equal states: shock speed undefined")
    return fd.v_f * (1.0 - (rho_l + rho_r) / fd.rho_jam)


def nondim_coeffs(stats: NormStats, x_range_ft: float, t_range_s: float) -> NondimCoeffs:
    """Residual coefficients from the normalization range and grid extents.

    C converts mph times seconds-per-foot into a pure number; A and B scale
    the advection terms of the normalized speed-form equation
    u_t = A u_x - B u u_x.
    """
    if not x_range_ft > 0 or not t_range_s > 0:
        raise ValueError("extents must be positive")
    c = MPH_TO_FPS * t_range_s / x_range_ft
    a = (stats.v_f - 2.0 * stats.u_min) * c
    b = 2.0 * (stats.u_max - stats.u_min) * c
    return NondimCoeffs(A=a, B=b, C=c)


# ---------------------------------------------------------------------------
# Godunov finite-volume oracle

def godunov_flux(fd: FundamentalDiagram, rho_l, rho_r) -> np.ndarray:
    """Exact Godunov numerical flux for the concave Greenshields q.

    min over [rho_l, rho_r] when rho_l <= rho_r, max over [rho_r, rho_l]
    otherwise; concavity reduces both to endpoint/vertex comparisons.
    """
    rho_l = np.asarray(rho_l, dtype=float)
    rho_r = np.asarray(rho_r, dtype=float)
    q_l = fd.v_f * rho_l * (1.0 - rho_l / fd.rho_jam)
    q_r = fd.v_f * rho_r * (1.0 - rho_r / fd.rho_jam)
    rho_c = fd.rho_jam / 2.0
    q_max = fd.v_f * fd.rho_jam / 4.0
    increasing = rho_l <= rho_r
    straddles = (rho_r <= rho_c) & (rho_c <= rho_l)
    return np.where(increasing, np.minimum(q_l, q_r), np.where(straddles, q_max, np.maximum(q_l, q_r)))


def godunov_evolve(
    rho0: np.ndarray,
    fd: FundamentalDiagram,
    dx: float,
    dt: float,
    n_steps: int,
    boundary: str = "fixed",
) -> np.ndarray:
    """March the conservation law forward; returns (n_cells, n_steps) densities.

    Column 0 is the initial profile; n_steps - 1 explicit updates follow.
    boundary 'fixed' freezes ghost cells at the initial endpoint states;
    'periodic' wraps.
    """
    rho0 = _check_density(fd, rho0)
    if rho0.ndim != 1 or rho0.size < 3:
        raise ValueError("initial profile must be 1-D with at least 3 cells")
    if n_steps < 2:
        raise ValueError("need at least 2 time snapshots")
    if boundary not in ("fixed", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")
    # max wave speed of the concave flux is v_f, attained at rho = 0
    if dt > dx / fd.v_f * (1.0 + 1e-12):
        raise ValueError("CFL violated: dt exceeds dx / v_f")
    out = np.empty((rho0.size, n_steps))
    out[:, 0] = rho0
    rho = rho0.copy()
    ghost_l, ghost_r = rho0[0], rho0[-1]
    nu = dt / dx
    for k in range(1, n_steps):
        if boundary == "fixed":
            ext = np.concatenate(([ghost_l], rho, [ghost_r]))
        else:
            ext = np.concatenate(([rho[-1]], rho, [rho[0]]))
        f = godunov_flux(fd, ext[:-1], ext[1:])
        rho = rho - nu * (f[1:] - f[:-1])
        out[:, k] = rho
    return out


# ---------------------------------------------------------------------------
# synthetic scenarios

_KINDS = ("riemann_shock", "rarefaction", "uniform", "multi_wave")


@dataclass(frozen=True)
class Scenario:
    """A synthetic run: initial density profile, diagram, and grid settings.

    v_f in fd is in mph; x extent in feet. dt_s, when given, overrides the
    CFL-limit time step and must itself satisfy the CFL bound.
    """

    kind: str
    rho0: np.ndarray
    fd: FundamentalDiagram
    n_steps: int
    cfl: float = 0.9
    x_length_ft: float = 10560.0
    dt_s: float | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        rho0 = np.asarray(self.rho0, dtype=float)
        if np.any(rho0 < 0) or np.any(rho0 > self.fd.rho_jam):
            raise ValueError("initial density outside [0, rho_jam]")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl factor must be in (0, 1]")
        if self.n_steps < 2:
            raise ValueError("need at least 2 time snapshots")
        if not self.x_length_ft > 0:
            raise ValueError("x_length_ft must be positive")
        rho0 = rho0.copy()
        rho0.flags.writeable = False
        object.__setattr__(self, "rho0", rho0)

    @property
    def n_cells(self) -> int:
        return self.rho0.size


def initial_density(kind: str, rho_left: float, rho_right: float, n_cells: int) -> np.ndarray:
    """Initial profiles keyed by scenario kind, on x_hat = linspace(0, 1).

    Steps sit at x_hat = 0.5. 'uniform' is a gentle half-cosine ramp between
    the two levels (exactly constant only when they coincide); 'multi_wave'
    superposes three harmonics around the mean level.
    """
    x_hat = np.linspace(0.0, 1.0, n_cells)
    if kind == "riemann_shock":
        if not rho_left < rho_right:
            raise ValueError("riemann_shock needs rho_left < rho_right")
        return np.where(x_hat < 0.5, rho_left, rho_right)
    if kind == "rarefaction":
        if not rho_left > rho_right:
            raise ValueError("rarefaction needs rho_left > rho_right")
        return np.where(x_hat < 0.5, rho_left, rho_right)
    if kind == "uniform":
        return rho_left + (rho_right - rho_left) * (1.0 - np.cos(2.0 * np.pi * x_hat)) / 2.0
    if kind == "multi_wave":
        base = (rho_left + rho_right) / 2.0
        amp = (rho_right - rho_left) / 2.0
        wave = (
            0.6 * np.sin(2.0 * np.pi * x_hat)
            + 0.3 * np.sin(4.0 * np.pi * x_hat + 1.0)
            + 0.1 * np.sin(6.0 * np.pi * x_hat + 2.0)
        )
        return base + amp * wave
    raise ValueError(f"unknown scenario kind {kind!r}")


def scenario_from_dict(doc: dict) -> Scenario:
    required = {"kind", "rho_left", "rho_right", "n_cells", "n_steps", "v_f", "rho_jam", "cfl"}
    missing = required - set(doc)
    if missing:
        raise ValueError(f"scenario is missing keys: {sorted(missing)}")
    fd = FundamentalDiagram(v_f=float(doc["v_f"]), rho_jam=float(doc["rho_jam"]))
    rho0 = initial_density(doc["kind"], float(doc["rho_left"]), float(doc["rho_right"]), int(doc["n_cells"]))
    return Scenario(
        kind=doc["kind"],
        rho0=rho0,
        fd=fd,
        n_steps=int(doc["n_steps"]),
        cfl=float(doc["cfl"]),
        x_length_ft=float(doc.get("x_length_ft", 10560.0)),
        dt_s=float(doc["dt_s"]) if doc.get("dt_s") is not None else None,
    )


def scenario_from_json(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def godunov_solve(scenario: Scenario, boundary: str = "fixed") -> tuple[np.ndarray, SpeedField]:
    """Run the oracle; returns densities and the derived speed field in mph.

    dx = x_length/(n_cells-1) so field extents span the cell-sample range;
    dt defaults to the CFL limit at the scenario's cfl factor.
    """
    fd = scenario.fd
    v_f_fps = fd.v_f * MPH_TO_FPS
    dx = scenario.x_length_ft / (scenario.n_cells - 1)
    dt = scenario.dt_s if scenario.dt_s is not None else scenario.cfl * dx / v_f_fps
    if dt > scenario.cfl * dx / v_f_fps * (1.0 + 1e-12):
        raise ValueError("CFL violated: dt_s exceeds cfl * dx / v_f")
    rho = godunov_evolve(scenario.rho0, fd, dx, dt, scenario.n_steps, boundary=boundary)
    speeds = fd.v_f * (1.0 - rho / fd.rho_jam)
    field = SpeedField(
        values=speeds,
        x_min=0.0,
        x_max=scenario.x_length_ft,
        t_range=(scenario.n_steps - 1) * dt,
    )
    return rho, field
