"""Command-line contract: file formats, exit codes, grids, and diagnostics."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from trafficpinn import cli
from trafficpinn.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, WORKERS_ENV, main
from trafficpinn.decomposition import SplitDecision
from trafficpinn.fields import read_field_csv, read_observations_json
from trafficpinn.network import Architecture, PinnNetwork, init_network, load_network, save_network
from trafficpinn.trainer import TrainingDiverged

SCENARIO = {
    "kind": "riemann_shock", "rho_left": 0.2, "rho_right": 0.7,
    "n_cells": 40, "n_steps": 60, "v_f": 60.0, "rho_jam": 1.0,
    "cfl": 0.9, "x_length_ft": 5280.0,
}

# micro schedule mirroring the trainer tests; keeps each cell under a second
TINY_HYPER = {
    "epochs_total": 24, "epochs_stage1": 8, "rar_period": 6, "steplr_step": 4,
    "n_colloc": 400, "batch_data": 128, "colloc_batch_floor": 16,
    "colloc_batch_budget": 64, "rar_candidates": 60, "rar_added": 20,
    "warm_epochs": 15, "warm_points": 80, "n_int": 16,
    "parent_widths": [2, 16, 8, 1], "child_widths": [2, 16, 8, 1],
}


@pytest.fixture(scope="module")
def field_csv(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    spec = root / "scenario.json"
    spec.write_text(json.dumps(SCENARIO))
    out = root / "field.csv"
    assert main(["generate", "--config", str(spec), "--out", str(out)]) == EXIT_OK
    return out


def write_config(path, field_csv, **overrides):
    doc = {
        "dataset": str(field_csv),
        "methods": ["B1_nn"],
        "sensor_counts": [5],
        "seeds": [42],
        "profile": "desk",
        "hyper": dict(TINY_HYPER),
        "out": str(path.parent / "results"),
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


def read_runs(out_dir):
    docs = {}
    for p in sorted((out_dir / "runs").glob("*.json")):
        docs[p.stem] = json.loads(p.read_text())
    return docs


# ---------------------------------------------------------------------------
# generate / sensors

def test_generate_shock_matches_analytic_front(field_csv):
    truth = read_field_csv(field_csv)
    last = truth.values[:, -1]
    assert last[0] == 48.0 and last[-1] == 18.0
    assert np.all(np.diff(last) <= 1e-12)
    # front starts mid-domain and moves at v_f * (1 - (rho_l + rho_r)) mph
    s_fps = 60.0 * 0.1 * 5280.0 / 3600.0
    front_cell = (0.5 * 5280.0 + s_fps * truth.t_range) / (5280.0 / 39)
    count_fast = int(np.sum(last > 33.0))
    assert abs(count_fast - front_cell) <= 2.0


def test_generate_uniform_constant(tmp_path):
    spec = dict(SCENARIO, kind="uniform", rho_left=0.3, rho_right=0.3)
    path = tmp_path / "u.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / "u.csv"
    assert main(["generate", "--config", str(path), "--out", str(out)]) == EXIT_OK
    truth = read_field_csv(out)
    assert float(np.ptp(truth.values)) == 0.0
    assert truth.values[0, 0] == 60.0 * 0.7


def test_generate_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "riemann_shock", ')
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert "malformed JSON" in capsys.readouterr().err


def test_generate_cfl_violation_exits_2(tmp_path, capsys):
    spec = dict(SCENARIO, dt_s=100.0)
    path = tmp_path / "cfl.json"
    path.write_text(json.dumps(spec))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE
    assert "CFL" in capsys.readouterr().err


def test_sensors_roundtrip(field_csv, tmp_path):
    out = tmp_path / "obs.json"
    assert main(["sensors", "--field", str(field_csv), "--count", "5",
                 "--out", str(out)]) == EXIT_OK
    obs = read_observations_json(out)
    assert len(obs.sensor_cells) == 5
    assert len(obs) == 5 * 60
    assert obs.stats.u_min < obs.stats.u_max


# ---------------------------------------------------------------------------
# run

def test_run_b1_writes_report_without_pde_series(field_csv, tmp_path):
    cfg = write_config(tmp_path / "c.json", field_csv)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    docs = read_runs(tmp_path / "results")
    (doc,) = docs.values()
    assert doc["status"] == "ok"
    assert "pde" not in doc["loss_parts"]
    assert doc["eval"]["rel_l2_pct"] > 0
    assert set(doc["eval"]) >= {"rel_l2_pct", "rmse_mph", "mae_mph", "train_time_s"}
    net_path = tmp_path / "results" / "checkpoints" / doc["checkpoints"]["nets"][0]
    assert load_network(net_path).layers[-1][0].shape == (8, 1)
    assert doc["checkpoints"]["coarse"] is None


def test_run_rerun_reproduces_eval_exactly(field_csv, tmp_path):
    cfg = write_config(tmp_path / "c.json", field_csv)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    (first,) = read_runs(tmp_path / "results").values()
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    (second,) = read_runs(tmp_path / "results").values()

    def metrics(doc):
        return {k: v for k, v in doc["eval"].items() if k != "train_time_s"}

    assert metrics(first) == metrics(second)
    assert first["losses"] == second["losses"]


def test_run_flag_overrides(field_csv, tmp_path):
    cfg = write_config(tmp_path / "c.json", field_csv, methods=["B6_addpinn"])
    assert main(["run", "--config", str(cfg), "--seed", "123",
                 "--direction", "temporal", "--scale", "0.5"]) == EXIT_OK
    docs = read_runs(tmp_path / "results")
    (stem,) = docs
    assert stem.endswith("seed123")
    doc = docs[stem]
    assert doc["seed"] == 123
    assert doc["direction"] == "temporal"
    assert len(doc["losses"]) == 12  # epochs_total shrunk by the scale factor


def test_run_rejects_multi_cell_config(field_csv, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", field_csv, seeds=[42, 123])
    assert main(["run", "--config", str(cfg)]) == EXIT_USAGE
    assert "single-cell" in capsys.readouterr().err


def test_run_divergence_keeps_partial_log(field_csv, tmp_path, monkeypatch):
    def explode(spec, obs, geometry, hyper, seed):
        raise TrainingDiverged("loss became non-finite", {
            "method": spec.id, "seed": seed, "losses": [1.0, float("nan")],
            "time_s": 0.01,
        })

    monkeypatch.setattr(cli, "train", explode)
    cfg = write_config(tmp_path / "c.json", field_csv)
    assert main(["run", "--config", str(cfg)]) == EXIT_RUNTIME
    (doc,) = read_runs(tmp_path / "results").values()
    assert doc["status"] == "diverged"
    assert math.isnan(doc["losses"][-1])
    assert "eval" not in doc


# ---------------------------------------------------------------------------
# matrix

def test_matrix_grid_files_and_sorted_rows(field_csv, tmp_path):
    cfg = write_config(tmp_path / "c.json", field_csv,
                       methods=["B1_nn", "B2_pinn"], sensor_counts=[4, 6],
                       seeds=[42, 123])
    assert main(["matrix", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "results"
    assert len(list((out / "runs").glob("*.json"))) == 8
    lines = (out / "aggregate.csv").read_text().splitlines()
    assert lines[0].split(",")[:4] == ["method", "dataset", "n_s", "n_seeds"]
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 4
    keys = [(r[0], int(r[2])) for r in rows]
    assert keys == sorted(keys)
    assert all(r[3] == "2" for r in rows)

    summary = json.loads((out / "matrix_summary.json").read_text())
    assert summary["cells_total"] == 8 and summary["cells_completed"] == 8
    assert summary["failed"] == []
    (pair,) = summary["pairwise"].values()
    assert pair["n_configs"] == 2


def test_matrix_winloss_consistent_with_means(field_csv, tmp_path):
    cfg = write_config(tmp_path / "c.json", field_csv,
                       methods=["B1_nn", "B2_pinn"], sensor_counts=[4, 6],
                       seeds=[42, 123])
    assert main(["matrix", "--config", str(cfg)]) == EXIT_OK
    lines = (tmp_path / "results" / "aggregate.csv").read_text().splitlines()[1:]
    rows = [line.split(",") for line in lines]
    means = {(r[0], r[2]): float(r[4]) for r in rows}
    for r in rows:
        mine = float(r[4])
        rivals = [v for (m, n), v in means.items() if n == r[2] and m != r[0]]
        assert int(r[8]) == sum(1 for v in rivals if mine < v)
        assert int(r[9]) == sum(1 for v in rivals if v < mine)


def test_matrix_continues_past_failed_cells(field_csv, tmp_path, monkeypatch):
    real_train = cli.train

    def flaky(spec, obs, geometry, hyper, seed):
        if spec.id == "B2_pinn":
            raise TrainingDiverged("boom", {"method": spec.id, "seed": seed,
                                            "losses": [float("nan")]})
        return real_train(spec, obs, geometry, hyper, seed)

    monkeypatch.setattr(cli, "train", flaky)
    cfg = write_config(tmp_path / "c.json", field_csv,
                       methods=["B1_nn", "B2_pinn"], seeds=[42, 123])
    assert main(["matrix", "--config", str(cfg)]) == EXIT_RUNTIME
    out = tmp_path / "results"
    summary = json.loads((out / "matrix_summary.json").read_text())
    assert summary["cells_completed"] == 2
    assert len(summary["failed"]) == 2
    assert all("B2_pinn" in stem for stem in summary["failed"])
    assert summary["pairwise"] is None
    rows = (out / "aggregate.csv").read_text().splitlines()[1:]
    assert len(rows) == 1 and rows[0].startswith("B1_nn")
    # the diverged cells still left their partial logs behind
    assert len(list((out / "runs").glob("B2_pinn*.json"))) == 2


def test_matrix_worker_count_does_not_change_outputs(field_csv, tmp_path, monkeypatch):
    cfg1 = write_config(tmp_path / "c1.json", field_csv,
                        methods=["B1_nn", "B2_pinn"], seeds=[42, 123],
                        out=str(tmp_path / "serial"))
    assert main(["matrix", "--config", str(cfg1)]) == EXIT_OK
    monkeypatch.setenv(WORKERS_ENV, "3")
    cfg2 = write_config(tmp_path / "c2.json", field_csv,
                        methods=["B1_nn", "B2_pinn"], seeds=[42, 123],
                        out=str(tmp_path / "parallel"))
    assert main(["matrix", "--config", str(cfg2)]) == EXIT_OK
    serial = (tmp_path / "serial" / "aggregate.csv").read_bytes()
    parallel = (tmp_path / "parallel" / "aggregate.csv").read_bytes()
    assert serial == parallel


def test_matrix_invalid_worker_env_exits_2(field_csv, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(WORKERS_ENV, "many")
    cfg = write_config(tmp_path / "c.json", field_csv)
    assert main(["matrix", "--config", str(cfg)]) == EXIT_USAGE
    assert WORKERS_ENV in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config validation

@pytest.mark.parametrize("overrides, fragment", [
    ({"methods": []}, "non-empty"),
    ({"methods": ["B9_unknown"]}, "unknown method"),
    ({"seeds": []}, "non-empty"),
    ({"scale": 0.0}, "scale"),
    ({"hyper": {"lr_stage1": 1e-3, "not_a_knob": 5}}, "unknown hyperparameter"),
    ({"extra_key": 1}, "unknown config keys"),
    ({"profile": "gpu"}, "unknown profile"),
])
def test_bad_configs_exit_2(field_csv, tmp_path, capsys, overrides, fragment):
    cfg = write_config(tmp_path / "c.json", field_csv, **overrides)
    assert main(["run", "--config", str(cfg)]) == EXIT_USAGE
    assert fragment in capsys.readouterr().err


def test_missing_dataset_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tmp_path / "absent.csv")
    assert main(["run", "--config", str(cfg)]) == EXIT_USAGE
    assert "no such dataset" in capsys.readouterr().err


def test_scenario_config_runs_without_field_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "scenario": SCENARIO, "methods": ["B1_nn"], "sensor_counts": [5],
        "seeds": [42], "profile": "desk", "hyper": dict(TINY_HYPER),
        "out": str(tmp_path / "results"),
    }))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    (stem,) = read_runs(tmp_path / "results")
    assert "riemann_shock" in stem


# ---------------------------------------------------------------------------
# analyze

@pytest.fixture(scope="module")
def coarse_checkpoint(field_csv, tmp_path_factory):
    """Stage 1 checkpoint from a decomposed micro run."""
    root = tmp_path_factory.mktemp("b6")
    cfg = write_config(root / "c.json", field_csv, methods=["B6_addpinn"],
                       mode="decomposition_enabled", out=str(root / "results"))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    (doc,) = read_runs(root / "results").values()
    assert doc["decomposition"]["decided"] is True
    assert doc["checkpoints"]["coarse"] is not None
    assert len(doc["checkpoints"]["nets"]) == 2
    return root / "results" / "checkpoints" / doc["checkpoints"]["coarse"]


def test_analyze_emits_profiles_and_decision(coarse_checkpoint, field_csv, tmp_path):
    out = tmp_path / "ana"
    assert main(["analyze", "--checkpoint", str(coarse_checkpoint),
                 "--field", str(field_csv), "--count", "5",
                 "--out", str(out), "--mode", "decomposition_enabled"]) == EXIT_OK
    for name, length in (("profile_x.csv", 200), ("profile_t.csv", 100)):
        lines = (out / name).read_text().splitlines()
        assert lines[0] == "position,value,smoothed"
        assert len(lines) == length + 1
    decision = SplitDecision.from_dict(json.loads((out / "decision.json").read_text()))
    assert decision.decomposed
    assert len(decision.splits_x) == 1


def test_analyze_is_reproducible(coarse_checkpoint, field_csv, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["analyze", "--checkpoint", str(coarse_checkpoint),
                     "--field", str(field_csv), "--count", "5",
                     "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for fname in ("profile_x.csv", "profile_t.csv", "decision.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_analyze_accepts_observation_file(coarse_checkpoint, field_csv, tmp_path):
    obs = tmp_path / "obs.json"
    assert main(["sensors", "--field", str(field_csv), "--count", "5",
                 "--out", str(obs)]) == EXIT_OK
    via_obs, via_count = tmp_path / "via_obs", tmp_path / "via_count"
    for out, extra in ((via_obs, ["--obs", str(obs)]), (via_count, ["--count", "5"])):
        assert main(["analyze", "--checkpoint", str(coarse_checkpoint),
                     "--field", str(field_csv), "--out", str(out)] + extra) == EXIT_OK
    assert (via_obs / "decision.json").read_bytes() == (via_count / "decision.json").read_bytes()


def test_analyze_zero_residual_checkpoint_flat_profiles(field_csv, tmp_path):
    # a constant network satisfies the advection equation exactly
    net = PinnNetwork(fourier=np.zeros((1, 2)),
                      layers=[(np.zeros((2, 1)), np.array([0.37]))], seed=0)
    ckpt = tmp_path / "const.json"
    save_network(net, ckpt)
    out = tmp_path / "ana"
    assert main(["analyze", "--checkpoint", str(ckpt), "--field", str(field_csv),
                 "--count", "5", "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "decision.json").read_text())
    assert doc["decomposed"] is False
    assert doc["peaks_x"] == [] and doc["peaks_t"] == []
    values = np.loadtxt(out / "profile_x.csv", delimiter=",", skiprows=1)[:, 1]
    assert float(np.max(values)) < 1e-20


def test_analyze_arch_mismatch_exits_2(coarse_checkpoint, field_csv, tmp_path, capsys):
    doc = json.loads(coarse_checkpoint.read_text())
    doc["arch"]["widths"] = [2, 32, 16, 1]
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(doc))
    assert main(["analyze", "--checkpoint", str(tampered), "--field", str(field_csv),
                 "--count", "5", "--out", str(tmp_path / "ana")]) == EXIT_USAGE
    assert "architecture" in capsys.readouterr().err


def test_analyze_requires_observation_source(coarse_checkpoint, field_csv, tmp_path, capsys):
    assert main(["analyze", "--checkpoint", str(coarse_checkpoint),
                 "--field", str(field_csv), "--out", str(tmp_path / "ana")]) == EXIT_USAGE
    assert "--obs or --count" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# entry point

def test_module_entry_point(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps(SCENARIO))
    out = tmp_path / "f.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "trafficpinn.cli", "generate",
         "--config", str(spec), "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    assert "wrote" in proc.stdout
