"""Scalar radial kernels and the landmark kernel matrix.

Two families are supported: the Gaussian ``exp(-x^2 / (2 scale^2))`` and the
centered cardinal cubic B-spline ``S3(x / scale)`` (support ``|u| < 2``,
``S3(0) = 2/3``, C^2).  All evaluation helpers accept arbitrary numpy array
shapes and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAUSSIAN = "gaussian"
BSPLINE3 = "bspline3"

_FAMILIES = (GAUSSIAN, BSPLINE3)


@dataclass(frozen=True)
class KernelSpec:
    """A scalar radial kernel: family name plus length scale."""

    family: str
    scale: float

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {_FAMILIES}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"kernel scale must be a positive finite number, got {self.scale}")

    def to_json(self) -> dict:
        return {"family": self.family, "scale": float(self.scale)}

    @staticmethod
    def from_json(obj: dict) -> "KernelSpec":
        return KernelSpec(family=obj["family"], scale=float(obj["scale"]))


def _bspline3(u):
    """Centered cardinal cubic B-spline on |u| < 2."""
    a = np.abs(u)
    inner = 2.0 / 3.0 - a**2 + 0.5 * a**3
    outer = (2.0 - a) ** 3 / 6.0
    return np.where(a < 1.0, inner, np.where(a < 2.0, outer, 0.0))


def _bspline3_d1(u):
    a = np.abs(u)
    s = np.sign(u)
    inner = s * (-2.0 * a + 1.5 * a**2)
    outer = s * (-0.5 * (2.0 - a) ** 2)
    return np.where(a < 1.0, inner, np.where(a < 2.0, outer, 0.0))


def _bspline3_d2(u):
    a = np.abs(u)
    inner = -2.0 + 3.0 * a
    outer = 2.0 - a
    return np.where(a < 1.0, inner, np.where(a < 2.0, outer, 0.0))


def value(spec: KernelSpec, x):
    """k(x); even in x, so the sign of x is irrelevant."""
    x = np.asarray(x, dtype=float)
    if spec.family == GAUSSIAN:
        return np.exp(-(x**2) / (2.0 * spec.scale**2))
    return _bspline3(x / spec.scale)


def d1(spec: KernelSpec, x):
    """dk/dx."""
    x = np.asarray(x, dtype=float)
    if spec.family == GAUSSIAN:
        return -(x / spec.scale**2) * value(spec, x)
    return _bspline3_d1(x / spec.scale) / spec.scale


def d2(spec: KernelSpec, x):
    """d^2k/dx^2."""
    x = np.asarray(x, dtype=float)
    if spec.family == GAUSSIAN:
        return (x**2 / spec.scale**4 - 1.0 / spec.scale**2) * value(spec, x)
    return _bspline3_d2(x / spec.scale) / spec.scale**2


def d1_over_r(spec: KernelSpec, r):
    """k'(r)/r with its finite r -> 0 limit k''(0).

    This is the radial factor of the gradient of k(|x|): grad k = (k'(r)/r) x.
    """
    r = np.asarray(r, dtype=float)
    if spec.family == GAUSSIAN:
        # k'(r)/r = -k(r)/scale^2 identically, no singularity.
        return -value(spec, r) / spec.scale**2
    safe = np.where(r > 0, r, 1.0)
    out = d1(spec, r) / safe
    return np.where(r > 0, out, -2.0 / spec.scale**2)


def grad(spec: KernelSpec, x):
    """Gradient of x -> k(|x|) for vectors x of shape (..., d)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    return d1_over_r(spec, r)[..., None] * x


def hessian(spec: KernelSpec, x):
    """Hessian of x -> k(|x|), shape (..., d, d).

    H = (k'/r) I + ((k'' - k'/r)/r^2) x x^T, with the smooth r -> 0 limit
    k''(0) I.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    r = np.linalg.norm(x, axis=-1)
    s = d1_over_r(spec, r)
    k2 = d2(spec, r)
    r2 = np.where(r > 0, r**2, 1.0)
    coef = np.where(r > 0, (k2 - s) / r2, 0.0)
    eye = np.eye(d)
    return s[..., None, None] * eye + coef[..., None, None] * (x[..., :, None] * x[..., None, :])


def kv_matrix(spec: KernelSpec, q) -> np.ndarray:
    """Landmark kernel matrix with entries k(|q_i - q_j|), shape (..., N, N)."""
    q = np.asarray(q, dtype=float)
    diff = q[..., :, None, :] - q[..., None, :, :]
    return value(spec, np.linalg.norm(diff, axis=-1))
