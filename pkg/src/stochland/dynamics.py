"""Deterministic landmark Hamiltonian dynamics.

The phase space is N landmarks in R^d with positions q and conjugate momenta
p.  The energy is

    h(q, p) = 1/2 sum_ij (p_i . p_j) k(|q_i - q_j|)

and trajectories follow the canonical equations dq/dt = dh/dp,
dp/dt = -dh/dq, integrated with a fixed-step classical RK4.

All core functions broadcast over leading batch dimensions: q and p may have
shape (..., N, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericalError


@dataclass
class PhaseState:
    """Positions and momenta of N landmarks at time t."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ValueError(f"q and p must share a shape, got {self.q.shape} vs {self.p.shape}")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase state entries must be finite")

    @property
    def n_landmarks(self) -> int:
        return self.q.shape[-2]

    @property
    def dim(self) -> int:
        return self.q.shape[-1]

    def copy(self) -> "PhaseState":
        return PhaseState(self.q.copy(), self.p.copy(), self.t)


@dataclass
class Trajectory:
    """A discrete trajectory: times plus position/momentum arrays.

    q and p have shape (K+1, N, d) for K steps.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def state(self, k: int) -> PhaseState:
        return PhaseState(self.q[k], self.p[k], float(self.times[k]))

    @property
    def endpoint(self) -> PhaseState:
        return self.state(len(self.times) - 1)

    def __len__(self) -> int:
        return len(self.times)


def hamiltonian(state: PhaseState, kv: kernels.KernelSpec) -> float:
    k = kernels.kv_matrix(kv, state.q)
    pdots = np.einsum("...ia,...ja->...ij", state.p, state.p)
    return 0.5 * np.einsum("...ij,...ij->...", pdots, k)


def grad_h(q, p, kv: kernels.KernelSpec):
    """(dh/dq, dh/dp), each of shape (..., N, d).

    dh/dp_i = sum_j p_j k(|q_i - q_j|)
    dh/dq_i = sum_j (p_i . p_j) grad k evaluated at q_i - q_j
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    diff = q[..., :, None, :] - q[..., None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    k = kernels.value(kv, r)
    gk = kernels.d1_over_r(kv, r)[..., None] * diff
    pdots = np.einsum("...ia,...ja->...ij", p, p)
    dq = np.einsum("...ij,...ija->...ia", pdots, gk)
    dp = np.einsum("...ij,...ja->...ia", k, p)
    return dq, dp


def canonical_drift(q, p, kv: kernels.KernelSpec):
    """(dq/dt, dp/dt) of the canonical equations."""
    dq_h, dp_h = grad_h(q, p, kv)
    return dp_h, -dq_h


def _rk4_step(q, p, kv, h):
    k1q, k1p = canonical_drift(q, p, kv)
    k2q, k2p = canonical_drift(q + 0.5 * h * k1q, p + 0.5 * h * k1p, kv)
    k3q, k3p = canonical_drift(q + 0.5 * h * k2q, p + 0.5 * h * k2p, kv)
    k4q, k4p = canonical_drift(q + h * k3q, p + h * k3p, kv)
    qn = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    pn = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
    return qn, pn


def step_sizes(T: float, dt: float) -> np.ndarray:
    """Fixed steps of size dt, the last one shortened to land exactly on T."""
    if dt <= 0 or T <= 0:
        raise ValueError("dt and T must be positive")
    if dt > T:
        raise ValueError("dt must not exceed T")
    n = max(int(round(T / dt)), 1)
    sizes = np.full(n, dt)
    sizes[-1] = T - (n - 1) * dt
    if sizes[-1] <= 0:
        sizes = np.full(n - 1, dt)
        sizes[-1] = T - (n - 2) * dt
    return sizes


def integrate_canonical(q, p, kv: kernels.KernelSpec, T: float, n_steps: int):
    """Endpoint (q, p) of the canonical flow over time T in n_steps RK4 steps.

    Batched: q, p of shape (..., N, d).  No per-step finiteness checks; used
    as the fast inner predictor.
    """
    h = T / n_steps
    for _ in range(n_steps):
        q, p = _rk4_step(q, p, kv, h)
    return q, p


def integrate_deterministic(
    state0: PhaseState, kv: kernels.KernelSpec, T: float, dt: float
) -> Trajectory:
    """RK4 trajectory of the canonical equations on [state0.t, state0.t + T]."""
    sizes = step_sizes(T, dt)
    n = len(sizes)
    q = np.empty((n + 1,) + state0.q.shape)
    p = np.empty_like(q)
    times = np.empty(n + 1)
    q[0], p[0], times[0] = state0.q, state0.p, state0.t
    for k, h in enumerate(sizes):
        q[k + 1], p[k + 1] = _rk4_step(q[k], p[k], kv, h)
        times[k + 1] = times[k] + h
        if not (np.all(np.isfinite(q[k + 1])) and np.all(np.isfinite(p[k + 1]))):
            raise NumericalError("non-finite state during deterministic integration",
                                 step=k, t=float(times[k + 1]))
    return Trajectory(times=times, q=q, p=p)


def predict_endpoint(
    state: PhaseState, kv: kernels.KernelSpec, T: float, n_pred_steps: int = 10
) -> np.ndarray:
    """Position part of the canonical flow run to time T from the given state.

    Coarse by design: this is the guidance predictor, called inside every
    bridge step.
    """
    remaining = T - state.t
    if remaining <= 0:
        return np.array(state.q, copy=True)
    q, _ = integrate_canonical(state.q, state.p, kv, remaining, n_pred_steps)
    return q


def trajectory_to_rows(traj: Trajectory):
    """Rows (t, landmark_index, q_1..q_d, p_1..p_d) for CSV export."""
    n_t, n_landmarks, d = traj.q.shape
    rows = []
    for k in range(n_t):
        for i in range(n_landmarks):
            rows.append(
                [traj.times[k], i, *traj.q[k, i].tolist(), *traj.p[k, i].tolist()]
            )
    return rows
