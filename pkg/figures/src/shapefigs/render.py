"""The five figure renderers.

Each renderer reads the simulation CLI's file formats and writes one image.
Rendering is a pure file-to-file transformation: deterministic for fixed
inputs and style, and the output file is only moved into place once fully
written (no partial files on failure).
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .recipes import FigureRecipe, RecipeError

TRAJECTORY_COLOR = "forestgreen"
ESTIMATE_COLOR = "royalblue"
DATA_COLOR = "black"


def _read_csv(path: Path) -> tuple[list[str], np.ndarray | list]:
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise RecipeError(f"{path}: no data rows")
    return header, rows


def _read_trajectory(path: Path):
    """trajectory.csv -> (times (K,), q (K, N, d))."""
    header, rows = _read_csv(path)
    if header[:2] != ["t", "landmark_index"]:
        raise RecipeError(f"{path}: not a trajectory file (header {header[:2]})")
    d = sum(1 for name in header if name.startswith("q_"))
    data = np.array([[float(v) for v in row] for row in rows])
    times = np.unique(data[:, 0])
    n = int(data[:, 1].max()) + 1
    q = np.full((len(times), n, d), np.nan)
    t_index = {t: k for k, t in enumerate(times)}
    for row in data:
        q[t_index[row[0]], int(row[1])] = row[2:2 + d]
    if np.any(np.isnan(q)):
        raise RecipeError(f"{path}: missing (t, landmark) combinations")
    return times, q


def _read_moments(path: Path):
    """moments.csv -> (final mean_q (N, d), final per-landmark blocks (N, d, d))."""
    header, rows = _read_csv(path)
    if header != ["t", "block", "i", "j", "value"]:
        raise RecipeError(f"{path}: not a moments file (header {header})")
    t_final = max(float(r[0]) for r in rows)
    mean_entries = {}
    cov_entries = {}
    for r in rows:
        if float(r[0]) != t_final:
            continue
        block, i, j, value = r[1], int(r[2]), int(r[3]), float(r[4])
        if block == "mean_q":
            mean_entries[(i, j)] = value
        elif block == "cov_qq":
            cov_entries[(i, j)] = value
    if not mean_entries or not cov_entries:
        raise RecipeError(f"{path}: missing mean_q or cov_qq blocks")
    n = max(i for i, _ in mean_entries) + 1
    d = max(j for _, j in mean_entries) + 1
    mean = np.zeros((n, d))
    for (i, j), v in mean_entries.items():
        mean[i, j] = v
    blocks = np.zeros((n, d, d))
    for (i, j), v in cov_entries.items():
        if i // d == j // d:
            blocks[i // d, i % d, j % d] = v
    return mean, blocks


def _read_dataset(path: Path) -> np.ndarray:
    obj = json.loads(Path(path).read_text())
    for key in ("d", "n_landmarks", "shapes"):
        if key not in obj:
            raise RecipeError(f"{path}: not a shape dataset ({key} missing)")
    return np.asarray(obj["shapes"], dtype=float)


def _ellipse_points(mean, cov, n_points: int = 120):
    """1-sigma covariance ellipse outline via eigen-decomposition."""
    w, vecs = np.linalg.eigh(cov)
    w = np.maximum(w, 0.0)
    t = np.linspace(0.0, 2.0 * np.pi, n_points)
    circle = np.stack([np.cos(t), np.sin(t)])
    return (vecs @ (np.sqrt(w)[:, None] * circle)).T + mean


def _closed(points) -> np.ndarray:
    return np.vstack([points, points[:1]])


def _render_trajectory(recipe: FigureRecipe, ax):
    times, q = _read_trajectory(recipe.resolve(recipe.inputs["trajectory"]))
    for i in range(q.shape[1]):
        ax.plot(q[:, i, 0], q[:, i, 1], "--", color=TRAJECTORY_COLOR, lw=1.0)
    ax.plot(q[0, :, 0], q[0, :, 1], "o", color=DATA_COLOR, ms=4, label="start")
    ax.plot(q[-1, :, 0], q[-1, :, 1], "o", color=TRAJECTORY_COLOR, ms=4, label="end")
    ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")


def _render_ellipses(recipe: FigureRecipe, ax):
    mean, blocks = _read_moments(recipe.resolve(recipe.inputs["moments"]))
    for i in range(len(mean)):
        outline = _ellipse_points(mean[i], blocks[i])
        ax.plot(outline[:, 0], outline[:, 1], "-", color=ESTIMATE_COLOR, lw=1.2)
    ax.plot(mean[:, 0], mean[:, 1], "o", color=ESTIMATE_COLOR, ms=4, label="model")
    if "observed" in recipe.inputs:
        shapes = _read_dataset(recipe.resolve(recipe.inputs["observed"]))
        obs_mean = shapes.mean(axis=0)
        centered = shapes - obs_mean
        cov = np.einsum("kia,kib->iab", centered, centered) / (len(shapes) - 1)
        for i in range(obs_mean.shape[0]):
            outline = _ellipse_points(obs_mean[i], cov[i])
            ax.plot(outline[:, 0], outline[:, 1], "-", color=DATA_COLOR, lw=1.0)
        ax.plot(obs_mean[:, 0], obs_mean[:, 1], ".", color=DATA_COLOR, ms=3,
                label="observed")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")


def _render_convergence(recipe: FigureRecipe, ax):
    path = recipe.resolve(recipe.inputs["trace"])
    header, rows = _read_csv(path)
    if header == ["generation", "best_cost"]:
        gens = [int(r[0]) for r in rows]
        costs = [float(r[1]) for r in rows]
        ax.plot(gens, costs, "-", color=ESTIMATE_COLOR, lw=1.2)
        ax.set_yscale("log")
        ax.set_xlabel("generation")
        ax.set_ylabel("cost")
    elif header[:3] == ["iteration", "parameter_name", "value"]:
        series: dict[str, list] = {}
        for r in rows:
            series.setdefault(r[1], []).append((int(r[0]), float(r[2])))
        for name, pts in sorted(series.items()):
            pts = sorted(pts)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], "-", lw=1.0, label=name)
        if len(series) <= 12:
            ax.legend(loc="best", fontsize=7)
        ax.set_xlabel("iteration")
        ax.set_ylabel("parameter value")
    else:
        raise RecipeError(f"{path}: unrecognized trace header {header}")


def _render_bridge(recipe: FigureRecipe, ax):
    src = _read_dataset(recipe.resolve(recipe.inputs["source"]))
    tgt = _read_dataset(recipe.resolve(recipe.inputs["target"]))
    bridges = recipe.inputs["bridges"]
    if not isinstance(bridges, list):
        bridges = [bridges]
    for b in bridges:
        _, q = _read_trajectory(recipe.resolve(b))
        for i in range(q.shape[1]):
            ax.plot(q[:, i, 0], q[:, i, 1], "-", color=TRAJECTORY_COLOR,
                    lw=0.8, alpha=0.8)
    for shape, style in ((src[0], "-"), (tgt[0], "-")):
        outline = _closed(shape)
        ax.plot(outline[:, 0], outline[:, 1], style, color="steelblue", lw=1.8)
        ax.plot(shape[:, 0], shape[:, 1], "o", color="steelblue", ms=3)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")


def _render_fields(recipe: FigureRecipe, ax):
    cfg = json.loads(recipe.resolve(recipe.inputs["config"]).read_text())
    noise = cfg.get("noise", {})
    if noise.get("backend") != "eulerian":
        raise RecipeError("fields figures need an eulerian noise section")
    if "grid" in noise:
        g = noise["grid"]
        xs = np.linspace(g["region"][0], g["region"][1], g["nx"])
        ys = np.linspace(g["region"][2], g["region"][3], g["ny"])
        centers = np.array([[x, y] for y in ys for x in xs])
        rule = g["amplitude_rule"]
        if rule["rule"] == "uniform":
            lams = np.full((len(centers), 2), float(rule["value"]))
        else:
            ymid = 0.5 * (g["region"][2] + g["region"][3])
            lams = np.where(centers[:, 1:2] < ymid,
                            [[rule["major"], rule["minor"]]],
                            [[rule["minor"], rule["major"]]])
    else:
        fields = noise.get("fields", [])
        if not fields:
            raise RecipeError("noise section has neither grid nor fields")
        centers = np.array([f["center"] for f in fields], dtype=float)
        lams = np.array([f["lambda"] for f in fields], dtype=float)
    ax.quiver(centers[:, 0], centers[:, 1], lams[:, 0], lams[:, 1],
              color=DATA_COLOR, angles="xy", scale_units="xy", scale=1.0,
              width=0.004, label="configured")
    if "estimated" in recipe.inputs:
        result = json.loads(recipe.resolve(recipe.inputs["estimated"]).read_text())
        try:
            est = np.asarray(result["theta"]["lambdas"], dtype=float)
        except (KeyError, TypeError):
            raise RecipeError("estimated result has no theta.lambdas") from None
        if est.shape != centers.shape:
            raise RecipeError(
                f"estimated lambdas shape {est.shape} does not match "
                f"{centers.shape[0]} configured fields")
        ax.quiver(centers[:, 0], centers[:, 1], est[:, 0], est[:, 1],
                  color=ESTIMATE_COLOR, angles="xy", scale_units="xy", scale=1.0,
                  width=0.004, label="estimated")
    ax.plot(centers[:, 0], centers[:, 1], ".", color="gray", ms=2)
    ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")


_RENDERERS = {
    "trajectory": _render_trajectory,
    "ellipses": _render_ellipses,
    "convergence": _render_convergence,
    "bridge": _render_bridge,
    "fields": _render_fields,
}


def render(recipe: FigureRecipe) -> Path:
    """Render one recipe to its output image; returns the output path."""
    out = recipe.resolve(recipe.output)
    fig, ax = plt.subplots(figsize=recipe.figsize, dpi=recipe.dpi)
    try:
        _RENDERERS[recipe.kind](recipe, ax)
        if recipe.title:
            ax.set_title(recipe.title)
        fig.tight_layout()
        tmp = out.with_name(out.name + ".tmp")
        fig.savefig(tmp, dpi=recipe.dpi, format=(out.suffix[1:] or "png"))
        os.replace(tmp, out)
    finally:
        plt.close(fig)
    return out
