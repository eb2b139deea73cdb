"""Command-line front end: scenario generation, sensor extraction, training
runs, experiment matrices, and post-hoc split diagnostics.

Every command overwrites its outputs, so a rerun with identical inputs and
seeds reproduces the same files (wall-clock fields aside). Exit codes:
0 all requested work completed, 1 at least one run failed at train time,
2 bad input (unreadable JSON, invalid config or checkpoint, missing file).

The experiment config is a single JSON object. All training hyperparameters
default to the protocol values and may be overridden per key under "hyper";
"profile": "desk" starts from the CPU-sized preset instead. Relative dataset
paths resolve against the config file's directory; the output directory
resolves against the working directory. TRAFFICPINN_WORKERS sets how many
matrix cells run concurrently (default 1); aggregation is always a single
final pass.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields, replace
from pathlib import Path

import numpy as np

from .decomposition import DIRECTIONS, MODES, decide, profile_from_grid, residual_grid
from .evaluation import aggregate, evaluate
from .fields import (
    SpeedField,
    denormalize,
    extract_observations,
    place_sensors,
    read_field_csv,
    read_observations_json,
    write_field_csv,
    write_observations_json,
)
from .losses import CausalConfig, LossWeights
from .lwr import godunov_solve, nondim_coeffs, scenario_from_dict
from .network import load_network, piecewise_predict, save_network
from .trainer import (
    DEFAULT_SEEDS,
    Hyperparams,
    METHOD_IDS,
    MethodSpec,
    TrainingDiverged,
    train,
)

__all__ = [
    "EXIT_OK",
    "EXIT_RUNTIME",
    "EXIT_USAGE",
    "CliError",
    "ExperimentConfig",
    "WORKERS_ENV",
    "load_config",
    "main",
    "reconstruct",
    "run_cell",
]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

WORKERS_ENV = "TRAFFICPINN_WORKERS"

_CONFIG_KEYS = {
    "dataset", "scenario", "methods", "sensor_counts", "seeds",
    "scale", "mode", "direction", "out", "profile", "hyper",
}
_HYPER_FIELDS = {f.name for f in dataclass_fields(Hyperparams)}
_CSV_COLUMNS = (
    "method", "dataset", "n_s", "n_seeds",
    "rel_l2_mean", "rel_l2_std", "rmse_mean", "rmse_std", "wins", "losses",
)


class CliError(Exception):
    """Input problem reportable to the user; carries the exit code."""

    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid: a dataset crossed with methods x sensors x seeds."""

    methods: tuple
    sensor_counts: tuple
    dataset_path: str | None = None
    scenario: dict | None = None
    seeds: tuple = DEFAULT_SEEDS
    scale: float = 1.0
    mode: str = "shock_screened"
    direction: str = "spatial"
    out_dir: str = "results"
    hyper: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        methods = tuple(str(m) for m in self.methods)
        counts = tuple(int(n) for n in self.sensor_counts)
        seeds = tuple(int(s) for s in self.seeds)
        if not methods:
            raise ValueError("methods must be non-empty")
        if not counts:
            raise ValueError("sensor_counts must be non-empty")
        if not seeds:
            raise ValueError("seeds must be non-empty")
        for m in methods:
            if m not in METHOD_IDS:
                raise ValueError(f"unknown method {m!r}")
        if any(n < 1 for n in counts):
            raise ValueError("sensor counts must be positive")
        if not 0 < self.scale <= 1:
            raise ValueError("scale must be in (0, 1]")
        if (self.dataset_path is None) == (self.scenario is None):
            raise ValueError("config needs exactly one of 'dataset' or 'scenario'")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "sensor_counts", counts)
        object.__setattr__(self, "seeds", seeds)


def _build_hyper(profile: str, overrides: dict) -> Hyperparams:
    if profile not in ("full", "desk"):
        raise CliError(f"unknown profile {profile!r}; expected 'full' or 'desk'")
    try:
        clean = {}
        for key, value in overrides.items():
            if key not in _HYPER_FIELDS:
                raise CliError(f"unknown hyperparameter {key!r}")
            if key in ("parent_widths", "child_widths"):
                value = tuple(int(w) for w in value)
            elif key == "weights":
                value = LossWeights(**value)
            elif key == "causal":
                value = CausalConfig(**value)
            clean[key] = value
        return Hyperparams.desk(**clean) if profile == "desk" else Hyperparams(**clean)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad hyperparameters: {exc}") from None


def config_from_dict(doc: dict, base_dir: Path) -> ExperimentConfig:
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise CliError(f"unknown config keys: {unknown}")
    for key in ("methods", "sensor_counts"):
        if key not in doc:
            raise CliError(f"config must list {key!r}")
    hyper = _build_hyper(doc.get("profile", "full"), doc.get("hyper", {}))
    dataset = doc.get("dataset")
    if dataset is not None:
        path = Path(dataset)
        dataset = str(path if path.is_absolute() else base_dir / path)
    try:
        return ExperimentConfig(
            methods=tuple(doc["methods"]),
            sensor_counts=tuple(doc["sensor_counts"]),
            dataset_path=dataset,
            scenario=doc.get("scenario"),
            seeds=tuple(doc.get("seeds", DEFAULT_SEEDS)),
            scale=float(doc.get("scale", 1.0)),
            mode=doc.get("mode", "shock_screened"),
            direction=doc.get("direction", "spatial"),
            out_dir=str(doc.get("out", "results")),
            hyper=hyper,
        )
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad config: {exc}") from None


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}") from None


def load_config(path, *, seed=None, scale=None, out=None, direction=None) -> ExperimentConfig:
    """Config file plus command-line overrides; overrides re-validate."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise CliError("config must be a JSON object")
    cfg = config_from_dict(doc, Path(path).resolve().parent)
    updates = {}
    if seed is not None:
        updates["seeds"] = (int(seed),)
    if scale is not None:
        updates["scale"] = float(scale)
    if out is not None:
        updates["out_dir"] = str(out)
    if direction is not None:
        updates["direction"] = direction
    if updates:
        try:
            cfg = replace(cfg, **updates)
        except ValueError as exc:
            raise CliError(f"bad override: {exc}") from None
    return cfg


def load_dataset(cfg: ExperimentConfig) -> tuple[str, SpeedField]:
    """Truth field plus a label naming it in file stems and CSV rows."""
    if cfg.scenario is not None:
        try:
            scenario = scenario_from_dict(cfg.scenario)
            _, truth = godunov_solve(scenario)
        except ValueError as exc:
            raise CliError(f"bad scenario: {exc}") from None
        return scenario.kind, truth
    path = Path(cfg.dataset_path)
    if not path.exists():
        raise CliError(f"no such dataset: {path}")
    try:
        return path.stem, read_field_csv(path)
    except ValueError as exc:
        raise CliError(f"bad field file {path}: {exc}") from None


# ---------------------------------------------------------------------------
# shared plumbing

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_json(doc, path) -> None:
    # sorted keys keep reruns byte-comparable
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True)
        fh.write("\n")


def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _load_field(path) -> SpeedField:
    try:
        return read_field_csv(path)
    except FileNotFoundError:
        raise CliError(f"no such field file: {path}") from None
    except ValueError as exc:
        raise CliError(f"bad field file {path}: {exc}") from None


def _ensure_dirs(out: Path) -> None:
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)


def reconstruct(partition, geometry, stats, chunk: int = 8192) -> np.ndarray:
    """Dense mph prediction on the field's own grid."""
    xh = geometry.cell_to_xhat(np.arange(geometry.n_cells))
    th = geometry.step_to_that(np.arange(geometry.n_steps))
    grid_x, grid_t = np.meshgrid(xh, th, indexing="ij")
    flat_x, flat_t = grid_x.ravel(), grid_t.ravel()
    out = np.empty(flat_x.size)
    for lo in range(0, flat_x.size, chunk):
        hi = lo + chunk
        out[lo:hi] = piecewise_predict(partition, flat_x[lo:hi], flat_t[lo:hi])
    return denormalize(out.reshape(grid_x.shape), stats)


def run_cell(truth: SpeedField, label: str, cfg: ExperimentConfig,
             method_id: str, n_s: int, seed: int) -> dict:
    """Train one (method, sensor count, seed) cell, evaluate against the full
    field, and persist the run log plus per-stage checkpoints.

    A divergence is recorded, not raised: the partial log lands in the run
    JSON with status "diverged" and the returned summary says so.
    """
    out = Path(cfg.out_dir)
    stem = f"{method_id}__{_safe(label)}__ns{n_s}__seed{seed}"
    summary = {"method": method_id, "n_s": n_s, "seed": seed, "stem": stem}
    spec = MethodSpec(method_id, mode=cfg.mode, direction=cfg.direction)
    obs = extract_observations(truth, place_sensors(truth.n_cells, n_s))
    hyper = cfg.hyper.scaled(cfg.scale)
    try:
        result = train(spec, obs, truth.geometry, hyper, seed)
    except TrainingDiverged as exc:
        doc = dict(exc.log)
        doc.update(dataset=label, n_s=n_s, scale=cfg.scale,
                   status="diverged", error=str(exc))
        _write_json(doc, out / "runs" / f"{stem}.json")
        summary.update(status="diverged", error=str(exc))
        return summary

    pred = reconstruct(result.partition, truth.geometry, obs.stats)
    report = evaluate(pred, truth, train_time_s=result.log.get("time_s", 0.0))
    checkpoints = {"coarse": None, "nets": []}
    if result.coarse_net is not None:
        path = out / "checkpoints" / f"{stem}.coarse.json"
        save_network(result.coarse_net, path)
        checkpoints["coarse"] = path.name
    for k, net in enumerate(result.partition.nets):
        path = out / "checkpoints" / f"{stem}.net{k}.json"
        save_network(net, path)
        checkpoints["nets"].append(path.name)
    doc = dict(result.log)
    doc.update(dataset=label, n_s=n_s, scale=cfg.scale, status="ok",
               eval=report.to_dict(), checkpoints=checkpoints)
    _write_json(doc, out / "runs" / f"{stem}.json")
    summary.update(status="ok", rel_l2_pct=report.rel_l2_pct, rmse_mph=report.rmse_mph)
    return summary


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{WORKERS_ENV} must be at least 1")
    return n


# ---------------------------------------------------------------------------
# aggregation output

def _aggregate_rows(label: str, completed: list) -> list:
    """Seed means per (method, n_s), with win/loss counts against the other
    methods' means at the same sensor count. Ties credit neither side."""
    groups: dict = {}
    for cell in completed:
        groups.setdefault((cell["method"], cell["n_s"]), []).append(cell)
    means = {}
    rows = []
    for (method, n_s), cells in sorted(groups.items()):
        rel = np.array([c["rel_l2_pct"] for c in cells], dtype=float)
        rmse = np.array([c["rmse_mph"] for c in cells], dtype=float)
        means[(method, n_s)] = float(rel.mean())
        rows.append({
            "method": method, "dataset": label, "n_s": n_s, "n_seeds": rel.size,
            "rel_l2_mean": float(rel.mean()),
            "rel_l2_std": float(rel.std(ddof=1)) if rel.size > 1 else 0.0,
            "rmse_mean": float(rmse.mean()),
            "rmse_std": float(rmse.std(ddof=1)) if rmse.size > 1 else 0.0,
        })
    for row in rows:
        mine = means[(row["method"], row["n_s"])]
        rivals = [v for (m, n), v in means.items()
                  if n == row["n_s"] and m != row["method"]]
        row["wins"] = sum(1 for v in rivals if mine < v)
        row["losses"] = sum(1 for v in rivals if v < mine)
    rows.sort(key=lambda r: (r["method"], r["n_s"]))
    return rows


def _csv_cell(value):
    # repr keeps full float precision and is stable across runs
    return repr(value) if isinstance(value, float) else value


def _write_rows(rows: list, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_cell(row[k]) for k in _CSV_COLUMNS})


def _pairwise_doc(results_map: dict) -> dict:
    report = aggregate(results_map)
    doc = {}
    for (a, b), ps in sorted(report.pairwise.items()):
        doc[f"{a} vs {b}"] = {
            "n_configs": ps.n_configs, "wins_a": ps.wins_a, "wins_b": ps.wins_b,
            "delta": ps.delta, "ci95_half": ps.ci95_half,
            "t_stat": ps.t_stat, "p_value": ps.p_value, "cohens_d": ps.cohens_d,
        }
    return doc


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args) -> int:
    doc = _read_json(args.config)
    if not isinstance(doc, dict):
        raise CliError("scenario must be a JSON object")
    try:
        scenario = scenario_from_dict(doc)
        _, truth = godunov_solve(scenario)
    except ValueError as exc:
        raise CliError(f"bad scenario: {exc}") from None
    write_field_csv(truth, args.out)
    print(f"wrote {args.out}: {truth.n_cells} cells x {truth.n_steps} steps, "
          f"t_range {truth.t_range:.6g} s")
    return EXIT_OK


def cmd_sensors(args) -> int:
    truth = _load_field(args.field)
    try:
        obs = extract_observations(truth, place_sensors(truth.n_cells, args.count))
    except ValueError as exc:
        raise CliError(f"cannot place sensors: {exc}") from None
    write_observations_json(obs, args.out)
    print(f"wrote {args.out}: {len(obs.sensor_cells)} sensors x {truth.n_steps} steps")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, scale=args.scale,
                      out=args.out, direction=args.direction)
    if len(cfg.methods) != 1 or len(cfg.sensor_counts) != 1 or len(cfg.seeds) != 1:
        raise CliError("run takes a single-cell config (one method, one sensor "
                       "count, one seed); use matrix for grids")
    label, truth = load_dataset(cfg)
    _ensure_dirs(Path(cfg.out_dir))
    cell = run_cell(truth, label, cfg, cfg.methods[0], cfg.sensor_counts[0], cfg.seeds[0])
    if cell["status"] != "ok":
        print(f"{cell['stem']}: {cell['status']}: {cell.get('error', '')}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cell['stem']}: rel L2 {cell['rel_l2_pct']:.3f}%  "
          f"rmse {cell['rmse_mph']:.3f} mph")
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = load_config(args.config, seed=args.seed, scale=args.scale,
                      out=args.out, direction=args.direction)
    workers = _workers()
    label, truth = load_dataset(cfg)
    out = Path(cfg.out_dir)
    _ensure_dirs(out)
    cells = [(m, n, s) for m in cfg.methods
             for n in cfg.sensor_counts for s in cfg.seeds]

    def one(cell):
        method_id, n_s, seed = cell
        try:
            return run_cell(truth, label, cfg, method_id, n_s, seed)
        except Exception as exc:  # a broken cell must not sink the matrix
            return {"method": method_id, "n_s": n_s, "seed": seed,
                    "status": "error", "error": str(exc),
                    "stem": f"{method_id}__{_safe(label)}__ns{n_s}__seed{seed}"}

    if workers == 1:
        outcomes = [one(c) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, cells))

    completed = [o for o in outcomes if o["status"] == "ok"]
    failed = [o for o in outcomes if o["status"] != "ok"]
    _write_rows(_aggregate_rows(label, completed), out / "aggregate.csv")
    pairwise = None
    if not failed and len(cfg.methods) > 1:
        results_map = {(o["method"], f"{label}|ns{o['n_s']}", o["seed"]): o["rel_l2_pct"]
                       for o in completed}
        pairwise = _pairwise_doc(results_map)
    _write_json({
        "dataset": label,
        "cells_total": len(cells),
        "cells_completed": len(completed),
        "failed": sorted(o["stem"] for o in failed),
        "pairwise": pairwise,
    }, out / "matrix_summary.json")
    for o in failed:
        print(f"{o['stem']}: {o['status']}: {o.get('error', '')}", file=sys.stderr)
    print(f"matrix: {len(completed)}/{len(cells)} cells completed; "
          f"aggregate at {out / 'aggregate.csv'}")
    return EXIT_OK if not failed else EXIT_RUNTIME


def _check_arch(net) -> None:
    # a checkpoint edited out of sync with its declared widths must not be
    # analyzed with the wrong geometry
    if net.arch is None:
        return
    want = net.arch.layer_shapes()
    got = [tuple(w.shape) for w, _ in net.layers]
    bias_ok = len(got) == len(want) and all(
        b.shape == (fan_out,) for (_, b), (_, fan_out) in zip(net.layers, want))
    if got != want or not bias_ok or net.fourier.shape != (net.arch.d_e, 2):
        raise CliError("checkpoint weights do not match their declared architecture")


def _write_profile(prof, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("position", "value", "smoothed"))
        for p, v, s in zip(prof.positions, prof.values, prof.smoothed):
            writer.writerow((repr(float(p)), repr(float(v)), repr(float(s))))


def cmd_analyze(args) -> int:
    """Residual profiles and the split decision from a saved coarse network,
    with no training involved."""
    try:
        net = load_network(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"no such checkpoint: {args.checkpoint}") from None
    except (KeyError, ValueError) as exc:
        raise CliError(f"bad checkpoint: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {args.checkpoint}: {exc}") from None
    _check_arch(net)
    truth = _load_field(args.field)
    if args.obs is not None:
        try:
            obs = read_observations_json(args.obs)
        except FileNotFoundError:
            raise CliError(f"no such file: {args.obs}") from None
        except (KeyError, ValueError) as exc:
            raise CliError(f"bad observations file: {exc}") from None
    elif args.count is not None:
        try:
            obs = extract_observations(truth, place_sensors(truth.n_cells, args.count))
        except ValueError as exc:
            raise CliError(f"cannot place sensors: {exc}") from None
    else:
        raise CliError("analyze needs --obs or --count to build the observation set")
    coeffs = nondim_coeffs(obs.stats, truth.geometry.x_range, truth.t_range)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = residual_grid(net, coeffs)
    _write_profile(profile_from_grid(grid, "x"), out / "profile_x.csv")
    _write_profile(profile_from_grid(grid, "t"), out / "profile_t.csv")
    decision = decide(obs, net, coeffs, args.mode, args.direction)
    _write_json(decision.to_dict(), out / "decision.json")
    print(f"indicator {decision.indicator:.4f}; decomposed={decision.decomposed}; "
          f"splits x={list(decision.splits_x)} t={list(decision.splits_t)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trafficpinn",
        description="Traffic speed-field reconstruction experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="solve a scenario and write the field CSV")
    gen.add_argument("--config", required=True, help="scenario spec JSON")
    gen.add_argument("--out", required=True, help="output field CSV path")
    gen.set_defaults(func=cmd_generate)

    sen = sub.add_parser("sensors", help="extract sensor observations from a field")
    sen.add_argument("--field", required=True, help="field CSV")
    sen.add_argument("--count", required=True, type=int, help="number of sensors")
    sen.add_argument("--out", required=True, help="output observations JSON")
    sen.set_defaults(func=cmd_sensors)

    runp = sub.add_parser("run", help="train one cell and evaluate on the full field")
    matp = sub.add_parser("matrix", help="run the methods x sensors x seeds grid")
    for p in (runp, matp):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="restrict to this one seed")
        p.add_argument("--scale", type=float, help="override the epoch-axis scale")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--direction", choices=DIRECTIONS,
                       help="override the split direction")
    runp.set_defaults(func=cmd_run)
    matp.set_defaults(func=cmd_matrix)

    ana = sub.add_parser(
        "analyze",
        help="emit residual profiles and the split decision for a coarse checkpoint")
    ana.add_argument("--checkpoint", required=True, help="saved network JSON")
    ana.add_argument("--field", required=True, help="field CSV supplying geometry")
    ana.add_argument("--obs", help="observations JSON (else derived via --count)")
    ana.add_argument("--count", type=int, help="sensor count when --obs is absent")
    ana.add_argument("--out", required=True, help="output directory")
    ana.add_argument("--direction", choices=DIRECTIONS, default="spatial")
    ana.add_argument("--mode", choices=MODES, default="shock_screened")
    ana.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    raise SystemExit(main())
