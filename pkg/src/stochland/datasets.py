"""Shape datasets: JSON I/O and synthetic generators.

The on-disk schema is shared by observed data and simulated endpoint dumps, so
estimation can consume the simulator's output unchanged:

    {"schema_version": 1, "d": 2, "n_landmarks": N,
     "shapes": [[[x, y], ...], ...], "provenance": "..."}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import KernelSpec
from .noise import EulerianNoise

SCHEMA_VERSION = 1


@dataclass
class ShapeDataset:
    d: int
    n_landmarks: int
    shapes: np.ndarray          # (n, N, d)
    provenance: str = ""

    def __post_init__(self):
        self.shapes = np.asarray(self.shapes, dtype=float)
        if self.shapes.ndim != 3:
            raise ValueError("shapes must be (n, N, d)")
        if self.shapes.shape[1:] != (self.n_landmarks, self.d):
            raise ValueError(
                f"shapes {self.shapes.shape} disagree with (n_landmarks, d) = "
                f"({self.n_landmarks}, {self.d})")
        if not np.all(np.isfinite(self.shapes)):
            raise ValueError("shape entries must be finite")

    def __len__(self) -> int:
        return self.shapes.shape[0]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "d": self.d,
            "n_landmarks": self.n_landmarks,
            "shapes": self.shapes.tolist(),
            "provenance": self.provenance,
        }

    @staticmethod
    def from_json(obj: dict) -> "ShapeDataset":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, "
                              f"got {obj.get('schema_version')}")
        for key in ("d", "n_landmarks", "shapes"):
            if key not in obj:
                raise ConfigError(f"{key}: missing dataset field")
        return ShapeDataset(d=int(obj["d"]), n_landmarks=int(obj["n_landmarks"]),
                            shapes=np.asarray(obj["shapes"], dtype=float),
                            provenance=str(obj.get("provenance", "")))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    @staticmethod
    def load(path) -> "ShapeDataset":
        with open(path) as fh:
            return ShapeDataset.from_json(json.load(fh))


def synth_ellipse(n_landmarks: int, center=(0.0, 0.0), axes=(1.0, 1.0),
                  rotation: float = 0.0) -> np.ndarray:
    """Evenly parameter-spaced landmarks on an ellipse, shape (N, 2)."""
    if n_landmarks < 3:
        raise ValueError("need at least 3 landmarks")
    t = 2.0 * np.pi * np.arange(n_landmarks) / n_landmarks
    pts = np.stack([axes[0] * np.cos(t), axes[1] * np.sin(t)], axis=-1)
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.asarray(center, dtype=float)


def _cc_outline(t):
    """A smooth crescent resembling a midsagittal corpus callosum outline."""
    x = np.cos(t)
    y = 0.45 * np.sin(t) - 0.35 * np.cos(2.0 * t) + 0.08 * np.sin(3.0 * t)
    return np.stack([x, 0.6 * y], axis=-1)


def synth_cc_like(n_shapes: int, n_landmarks: int = 77, seed: int = 0,
                  variability: float = 0.03, n_modes: int = 6) -> ShapeDataset:
    """Synthetic stand-in for a corpus-callosum population.

    Each shape is the reference crescent outline displaced along its normals by
    a truncated Fourier series with 1/k-damped random coefficients.  This is a
    clearly labeled substitute for real segmentations, meant only to exercise
    the estimation pipelines end to end.
    """
    rng = np.random.default_rng(seed)
    t = 2.0 * np.pi * np.arange(n_landmarks) / n_landmarks
    base = _cc_outline(t)
    tangent = np.gradient(base, axis=0)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    shapes = np.empty((n_shapes, n_landmarks, 2))
    for m in range(n_shapes):
        disp = np.zeros(n_landmarks)
        for k in range(1, n_modes + 1):
            a, b = rng.normal(scale=variability / k, size=2)
            disp += a * np.cos(k * t) + b * np.sin(k * t)
        shapes[m] = base + disp[:, None] * normal
    return ShapeDataset(d=2, n_landmarks=n_landmarks, shapes=shapes,
                        provenance=f"synthetic cc-like stand-in (seed={seed})")


def template_cc_like(n_landmarks: int = 77) -> np.ndarray:
    """The unperturbed reference outline used by synth_cc_like."""
    t = 2.0 * np.pi * np.arange(n_landmarks) / n_landmarks
    return _cc_outline(t)


def synth_grid_noise(nx: int, ny: int, region, scale: float,
                     amplitude_rule: dict, family: str = "gaussian") -> EulerianNoise:
    """A regular grid of noise fields over a rectangular region.

    region: (xmin, xmax, ymin, ymax); centers include the region corners.
    amplitude_rule:
      {"rule": "uniform", "value": c}            -> every lambda_l = (c, c)
      {"rule": "split_xy", "major": a, "minor": b} -> fields in the lower half
        get (a, b) (x-dominant), fields in the upper half get (b, a).
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    xmin, xmax, ymin, ymax = (float(v) for v in region)
    xs = np.linspace(xmin, xmax, nx) if nx > 1 else np.array([(xmin + xmax) / 2.0])
    ys = np.linspace(ymin, ymax, ny) if ny > 1 else np.array([(ymin + ymax) / 2.0])
    centers = np.array([[x, y] for y in ys for x in xs])
    j = len(centers)
    rule = amplitude_rule.get("rule")
    if rule == "uniform":
        c = float(amplitude_rule["value"])
        lams = np.full((j, 2), c)
    elif rule == "split_xy":
        a = float(amplitude_rule["major"])
        b = float(amplitude_rule["minor"])
        ymid = 0.5 * (ymin + ymax)
        lams = np.where(centers[:, 1:2] < ymid, [[a, b]], [[b, a]])
    else:
        raise ConfigError(f"amplitude_rule.rule: unknown rule {rule!r}")
    return EulerianNoise(family=family, centers=centers, lams=lams,
                         scales=np.full(j, float(scale)))
