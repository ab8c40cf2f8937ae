import json
from pathlib import Path

import numpy as np
import pytest

from stochland import cli
from stochland.datasets import ShapeDataset


def write_config(tmp_path, extra=None, **overrides):
    cfg = {
        "schema_version": 1,
        "seed": 11,
        "kernel": {"family": "gaussian", "scale": 0.5},
        "noise": {"backend": "eulerian", "family": "gaussian",
                  "fields": [
                      {"center": [0.0, 0.0], "lambda": [0.1, 0.02], "scale": 0.4},
                      {"center": [0.4, 0.2], "lambda": [0.03, 0.12], "scale": 0.4},
                  ]},
        "initial": {"ellipse": {"n_landmarks": 3, "axes": [0.4, 0.3]},
                    "p0": [[0.2, 0.0], [0.0, 0.15], [-0.2, 0.0]]},
        "time": {"T": 1.0},
        "sde": {"dt": 0.02},
        "ensemble": {"n_samples": 60},
        "moments": {"dt": 0.05},
    }
    cfg.update(overrides)
    if extra:
        cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def run(args):
    return cli.main([str(a) for a in args])


def test_simulate_deterministic_rerun(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--config", cfg, "--out", out1]) == 0
    assert run(["simulate", "--config", cfg, "--out", out2]) == 0
    assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()
    assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()


def test_config_error_exit_code_and_path(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "seed": 1,
                               "kernel": {"family": "gaussian", "scale": -1},
                               "initial": {"q0": [[0, 0]]},
                               "time": {"T": 1.0}, "sde": {"dt": 0.1}}))
    assert run(["simulate", "--config", bad, "--out", tmp_path / "o"]) == cli.EXIT_CONFIG
    assert "kernel" in capsys.readouterr().err


def test_missing_field_reports_path(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "seed": 1,
                               "kernel": {"family": "gaussian"},
                               "initial": {"q0": [[0, 0]]},
                               "time": {"T": 1.0}, "sde": {"dt": 0.1}}))
    assert run(["simulate", "--config", bad, "--out", tmp_path / "o"]) == cli.EXIT_CONFIG
    assert "kernel.scale" in capsys.readouterr().err


def test_sample_endpoints_schema_matches_dataset(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "s"
    assert run(["sample", "--config", cfg, "--out", out]) == 0
    ds = ShapeDataset.load(out / "endpoints.json")
    assert ds.shapes.shape == (60, 3, 2)


def test_manifest_reproduces_run(tmp_path):
    cfg = write_config(tmp_path)
    out1 = tmp_path / "m1"
    assert run(["sample", "--config", cfg, "--out", out1]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    # the manifest's embedded config alone reproduces the outputs
    cfg2 = tmp_path / "from_manifest.json"
    cfg2.write_text(json.dumps(manifest["config"]))
    out2 = tmp_path / "m2"
    assert run([manifest["command"], "--config", cfg2, "--out", out2]) == 0
    assert (out1 / "endpoints.json").read_bytes() == (out2 / "endpoints.json").read_bytes()
    assert (out1 / "result.json").read_bytes() == (out2 / "result.json").read_bytes()


def test_seed_override_changes_hash_and_output(tmp_path):
    cfg = write_config(tmp_path)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run(["sample", "--config", cfg, "--out", out1]) == 0
    assert run(["sample", "--config", cfg, "--seed", 99, "--out", out2]) == 0
    m1 = json.loads((out1 / "manifest.json").read_text())
    m2 = json.loads((out2 / "manifest.json").read_text())
    assert m1["config_sha256"] != m2["config_sha256"]
    assert m2["seed"] == 99
    assert (out1 / "endpoints.json").read_bytes() != (out2 / "endpoints.json").read_bytes()


def test_moments_csv_written(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "mo"
    assert run(["moments", "--config", cfg, "--out", out]) == 0
    header = (out / "moments.csv").read_text().splitlines()[0]
    assert header == "t,block,i,j,value"
    result = json.loads((out / "result.json").read_text())
    assert np.asarray(result["cov_qq_blocks"]).shape == (3, 2, 2)


def test_synth_ellipse_and_cc(tmp_path):
    for extra in ({"synth": {"kind": "ellipse", "n_landmarks": 5, "axes": [1.0, 0.5]}},
                  {"synth": {"kind": "cc-like", "n_shapes": 4, "n_landmarks": 30}}):
        cfg = write_config(tmp_path, extra=extra)
        out = tmp_path / f"synth_{extra['synth']['kind']}"
        assert run(["synth", "--config", cfg, "--out", out]) == 0
        ds = ShapeDataset.load(out / "dataset.json")
        assert len(ds) >= 1


def test_simulated_data_feeds_estimation(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "pipe"
    assert run(["sample", "--config", cfg, "--out", out]) == 0
    fit_cfg = write_config(
        tmp_path,
        extra={
            "data": {"input": str(out / "endpoints.json")},
            "fit_moments": {"estimate_p0": False, "lambda_bounds": [0.0, 0.3],
                            "dt": 0.1,
                            "de": {"generations": 5, "population": 12, "f": 0.5}},
        })
    out2 = tmp_path / "fit"
    assert run(["fit-moments", "--config", fit_cfg, "--out", out2]) == 0
    result = json.loads((out2 / "result.json").read_text())
    assert "lambdas" in result["theta"]
    trace = (out2 / "de_trace.csv").read_text().splitlines()
    assert trace[0] == "generation,best_cost"
    costs = [float(line.split(",")[1]) for line in trace[1:]]
    assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))


def test_unknown_dataset_file(tmp_path, capsys):
    cfg = write_config(tmp_path, extra={"data": {"input": "missing.json"},
                                        "fit_moments": {}})
    assert run(["fit-moments", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG
    assert "data.input" in capsys.readouterr().err


def test_likelihood_and_bridge_commands(tmp_path):
    lag_noise = {"backend": "lagrangian", "family": "gaussian", "scale": 0.0001,
                 "lambdas": [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]}
    cfg = write_config(tmp_path, noise=lag_noise, initial={
        "ellipse": {"n_landmarks": 3, "axes": [0.4, 0.3]}, "p0": "zero"})
    out = tmp_path / "src"
    assert run(["sample", "--config", cfg, "--out", out]) == 0
    cfg2 = write_config(
        tmp_path, noise=lag_noise,
        initial={"ellipse": {"n_landmarks": 3, "axes": [0.4, 0.3]}, "p0": "zero"},
        extra={"data": {"input": str(out / "endpoints.json")},
               "bridge": {"n_steps": 30, "epsilon_end": 0.05, "n_samples": 40,
                          "n_dump": 2}})
    outb = tmp_path / "br"
    assert run(["bridge", "--config", cfg2, "--out", outb]) == 0
    assert (outb / "bridge_000.csv").exists()
    sidecar = json.loads((outb / "bridge_000.json").read_text())
    assert set(sidecar) == {"log_weight", "endpoint_gap"}
    outl = tmp_path / "lik"
    # trim the dataset for speed
    ds = ShapeDataset.load(out / "endpoints.json")
    small = ShapeDataset(d=2, n_landmarks=3, shapes=ds.shapes[:3], provenance="")
    small.save(tmp_path / "small.json")
    cfg3 = write_config(
        tmp_path, noise=lag_noise,
        initial={"ellipse": {"n_landmarks": 3, "axes": [0.4, 0.3]}, "p0": "zero"},
        extra={"data": {"input": str(tmp_path / "small.json")},
               "bridge": {"n_steps": 30, "epsilon_end": 0.05, "n_samples": 60}})
    assert run(["likelihood", "--config", cfg3, "--out", outl]) == 0
    result = json.loads((outl / "result.json").read_text())
    assert np.isfinite(result["log_likelihood"])
    assert len(result["per_observation_ess"]) == 3
