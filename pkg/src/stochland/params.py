"""Estimable model parameters shared by the estimation modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Theta:
    """Template, initial momentum and noise amplitudes.

    lambdas follows the backend layout: (J, d) amplitudes for Eulerian fields,
    (N, d) per-landmark amplitudes for the Lagrangian kernel matrix.
    """

    q0: np.ndarray
    p0: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        for name, v in (("q0", self.q0), ("p0", self.p0), ("lambdas", self.lambdas)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"theta.{name} must be finite")

    def copy(self) -> "Theta":
        return Theta(self.q0.copy(), self.p0.copy(), self.lambdas.copy())
