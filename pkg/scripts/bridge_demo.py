#!/usr/bin/env python3
"""Guided bridges between two crescent shapes, rendered over the outlines.

Run from the repository root:  python scripts/bridge_demo.py
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np

OUT = Path("runs/bridge_demo").resolve()


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    from stochland import datasets

    n_landmarks = 24
    source = datasets.template_cc_like(n_landmarks)
    target_ds = datasets.synth_cc_like(1, n_landmarks=n_landmarks, seed=9,
                                       variability=0.12)
    target = target_ds.shapes[0] + np.array([0.15, 0.1])
    datasets.ShapeDataset(2, n_landmarks, source[None],
                          "bridge demo source").save(OUT / "source.json")
    datasets.ShapeDataset(2, n_landmarks, target[None],
                          "bridge demo target").save(OUT / "target.json")

    config = {
        "schema_version": 1,
        "seed": 17,
        "kernel": {"family": "gaussian", "scale": 0.4},
        "noise": {"backend": "lagrangian", "family": "gaussian", "scale": 0.25,
                  "lambdas": [[0.7, 0.7]] * n_landmarks},
        "initial": {"q0": source.tolist(), "p0": "zero"},
        "time": {"T": 1.0},
        "sde": {"dt": 0.01},
        "data": {"input": str(OUT / "target.json")},
        "bridge": {"n_steps": 120, "epsilon_end": 0.02, "n_samples": 6,
                   "n_dump": 5},
    }
    (OUT / "run.json").write_text(json.dumps(config, indent=1))
    subprocess.run([sys.executable, "-m", "stochland.cli", "bridge",
                    "--config", str(OUT / "run.json"),
                    "--out", str(OUT / "bridges")], check=True)
    recipe = {
        "kind": "bridge",
        "inputs": {
            "bridges": [str(OUT / "bridges" / f"bridge_{m:03d}.csv") for m in range(5)],
            "source": str(OUT / "source.json"),
            "target": str(OUT / "target.json"),
        },
        "style": {"title": "guided bridges between two shapes"},
        "output": str(OUT / "fig_bridge.png"),
    }
    (OUT / "bridge.recipe.json").write_text(json.dumps(recipe, indent=1))
    subprocess.run([sys.executable, "-m", "shapefigs.cli",
                    "--recipe", str(OUT / "bridge.recipe.json")], check=True)
    print(f"figure in {OUT}/fig_bridge.png")


if __name__ == "__main__":
    main()
