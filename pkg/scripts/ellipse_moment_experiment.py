#!/usr/bin/env python3
"""Synthetic ellipse experiment: simulate, fit noise amplitudes, render figures.

Simulates 5000 endpoint shapes from a 5-landmark ellipse driven through a
4x4 grid of Gaussian noise fields (bottom fields x-dominant, top fields
y-dominant), then recovers the amplitudes by moment matching with
differential evolution and renders the trajectory/ellipse, convergence and
field-arrow figures.

Run from the repository root:  python scripts/ellipse_moment_experiment.py
"""

import json
import subprocess
import sys
from pathlib import Path

OUT = Path("runs/ellipse_moments").resolve()

CONFIG = {
    "schema_version": 1,
    "seed": 2024,
    "kernel": {"family": "gaussian", "scale": 0.4},
    "noise": {"backend": "eulerian", "family": "gaussian",
              "grid": {"nx": 4, "ny": 4, "region": [-0.4, 0.4, -0.4, 0.4],
                       "scale": 0.085,
                       "amplitude_rule": {"rule": "split_xy",
                                          "major": 0.15, "minor": 0.02}}},
    "initial": {"ellipse": {"n_landmarks": 5, "center": [-0.5, 0.0],
                            "axes": [0.12, 0.42]},
                "p0": [[0.35, 0.0]] * 5},
    "time": {"T": 1.0},
    "sde": {"dt": 0.001},
    "ensemble": {"n_samples": 5000},
    "moments": {"dt": 0.02},
    "data": {"input": str(OUT / "sample" / "endpoints.json")},
    "fit_moments": {"estimate_p0": True, "lambda_bounds": [0.0, 0.17],
                    "p0_bounds": [-0.6, 0.6], "dt": 0.05,
                    "de": {"population": 64, "generations": 250, "f": 0.6,
                           "cr": 0.9, "polish_steps": 25}},
}


def run(command, out):
    cmd = [sys.executable, "-m", "stochland.cli", command,
           "--config", str(OUT / "run.json"), "--out", str(out)]
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def render(recipe, name):
    path = OUT / f"{name}.recipe.json"
    path.write_text(json.dumps(recipe, indent=1))
    cmd = [sys.executable, "-m", "shapefigs.cli", "--recipe", str(path)]
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "run.json").write_text(json.dumps(CONFIG, indent=1))
    run("simulate", OUT / "traj")
    run("sample", OUT / "sample")
    run("moments", OUT / "moments")
    run("fit-moments", OUT / "fit")
    render({"kind": "trajectory",
            "inputs": {"trajectory": str(OUT / "traj" / "trajectory.csv")},
            "style": {"title": "landmark trajectories"},
            "output": str(OUT / "fig_trajectory.png")}, "trajectory")
    render({"kind": "ellipses",
            "inputs": {"moments": str(OUT / "moments" / "moments.csv"),
                       "observed": str(OUT / "sample" / "endpoints.json")},
            "style": {"title": "final mean and 1-sigma ellipses"},
            "output": str(OUT / "fig_ellipses.png")}, "ellipses")
    render({"kind": "convergence",
            "inputs": {"trace": str(OUT / "fit" / "de_trace.csv")},
            "style": {"title": "differential evolution convergence"},
            "output": str(OUT / "fig_convergence.png")}, "convergence")
    render({"kind": "fields",
            "inputs": {"config": str(OUT / "run.json"),
                       "estimated": str(OUT / "fit" / "result.json")},
            "style": {"title": "noise fields: configured vs estimated"},
            "output": str(OUT / "fig_fields.png")}, "fields")
    result = json.loads((OUT / "fit" / "result.json").read_text())
    print(f"final cost: {result['cost']:.3e}")
    print(f"figures and results in {OUT}/")


if __name__ == "__main__":
    main()
