"""Closed mean/covariance evolution of the stochastic landmark system.

The Fokker-Planck dynamics of the phase-space density is approximated by a
Gaussian (second-moment) closure: third and higher centered cumulants are
discarded, coefficient functions are evaluated at the mean, and second moments
couple through the drift Jacobian.  Writing X = (q, p), a for the Ito drift
(canonical drift plus the Stratonovich->Ito correction) and Sigma for the
diffusion matrix, the closed system is

    d<X>/dt = a(<X>)
    dC/dt   = A(<X>) C + C A(<X>)^T + Sigma(<X>) Sigma(<X>)^T,

with A = da/dX and C the centered second-moment matrix.  The explicit block
forms are derived in docs/moment_equations.md.  With zero noise and zero
initial covariance the system is exact; with vanishing Hamiltonian and
spatially constant fields it is exact as well (linear SDE).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import noise as noise_mod, sde
from .errors import NumericalError
from .kernels import KernelSpec
from .noise import NoiseModel

_BLOCKS = ("mean_q", "mean_p", "cov_qq", "cov_qp", "cov_pp")


@dataclass
class MomentState:
    """Means and centered second moments of (q, p)."""

    mean_q: np.ndarray   # (N, d)
    mean_p: np.ndarray   # (N, d)
    cov_qq: np.ndarray   # (Nd, Nd)
    cov_qp: np.ndarray   # (Nd, Nd), rows q, columns p
    cov_pp: np.ndarray   # (Nd, Nd)

    @staticmethod
    def zero_cov(mean_q, mean_p) -> "MomentState":
        mean_q = np.asarray(mean_q, dtype=float)
        mean_p = np.asarray(mean_p, dtype=float)
        nd = mean_q.shape[0] * mean_q.shape[1]
        z = np.zeros((nd, nd))
        return MomentState(mean_q, mean_p, z.copy(), z.copy(), z.copy())

    @property
    def n_landmarks(self) -> int:
        return self.mean_q.shape[0]

    @property
    def dim(self) -> int:
        return self.mean_q.shape[1]

    def landmark_cov_blocks(self) -> np.ndarray:
        """Per-landmark d x d diagonal blocks of cov_qq, shape (N, d, d)."""
        n, d = self.n_landmarks, self.dim
        out = np.empty((n, d, d))
        for i in range(n):
            out[i] = self.cov_qq[i * d:(i + 1) * d, i * d:(i + 1) * d]
        return out


@dataclass
class MomentTargets:
    """Sample mean and per-landmark centered covariances of observed shapes."""

    mean_q: np.ndarray    # (N, d)
    cov_blocks: np.ndarray  # (N, d, d)


def targets_from_shapes(shapes) -> MomentTargets:
    shapes = np.asarray(shapes, dtype=float)
    if shapes.ndim != 3 or shapes.shape[0] < 2:
        raise ValueError("need at least 2 shapes of shape (N, d)")
    mean = shapes.mean(axis=0)
    centered = shapes - mean
    cov = np.einsum("kia,kib->iab", centered, centered) / (shapes.shape[0] - 1)
    return MomentTargets(mean_q=mean, cov_blocks=cov)


def _drift_flat(x, n, d, kv, noise):
    """Ito drift of the flat phase vector; batched over leading dims of x."""
    q, p = sde.unpack(x, n, d)
    fq, fp = sde.drift(q, p, kv, noise, ito=True)
    return sde.pack(fq, fp)


def _drift_and_jacobian(x, n, d, kv, noise, eps: float = 1e-6):
    """(a(x), da/dx) via one batched drift call; central differences for A."""
    k = x.shape[0]
    h = eps * np.maximum(1.0, np.abs(x))
    pert = np.concatenate([x[None, :], x + np.diag(h), x - np.diag(h)], axis=0)
    f = _drift_flat(pert, n, d, kv, noise)
    big_a = (f[1:k + 1] - f[k + 1:]).T / (2.0 * h)
    return f[0], big_a


def moment_rhs(ms: MomentState, kv: KernelSpec, noise: NoiseModel) -> MomentState:
    """Time derivative of the closed moment system."""
    n, d = ms.n_landmarks, ms.dim
    nd = n * d
    x = sde.pack(ms.mean_q, ms.mean_p)
    a, big_a = _drift_and_jacobian(x, n, d, kv, noise)
    b = noise_mod.build_sigma(noise, ms.mean_q, ms.mean_p).matrix
    c = np.block([[ms.cov_qq, ms.cov_qp], [ms.cov_qp.T, ms.cov_pp]])
    dc = big_a @ c + c @ big_a.T + b @ b.T
    dq, dp = sde.unpack(a, n, d)
    return MomentState(
        mean_q=dq, mean_p=dp,
        cov_qq=dc[:nd, :nd], cov_qp=dc[:nd, nd:], cov_pp=dc[nd:, nd:],
    )


def _axpy(ms: MomentState, h: float, rhs: MomentState) -> MomentState:
    return MomentState(
        ms.mean_q + h * rhs.mean_q,
        ms.mean_p + h * rhs.mean_p,
        ms.cov_qq + h * rhs.cov_qq,
        ms.cov_qp + h * rhs.cov_qp,
        ms.cov_pp + h * rhs.cov_pp,
    )


def _rk4_combine(ms, h, k1, k2, k3, k4) -> MomentState:
    def comb(f):
        return f(ms) + (h / 6.0) * (f(k1) + 2 * f(k2) + 2 * f(k3) + f(k4))
    out = MomentState(
        comb(lambda s: s.mean_q), comb(lambda s: s.mean_p),
        comb(lambda s: s.cov_qq), comb(lambda s: s.cov_qp), comb(lambda s: s.cov_pp),
    )
    out.cov_qq = 0.5 * (out.cov_qq + out.cov_qq.T)
    out.cov_pp = 0.5 * (out.cov_pp + out.cov_pp.T)
    return out


def integrate_moments(ms0: MomentState, kv: KernelSpec, noise: NoiseModel,
                      T: float, dt: float, return_path: bool = False):
    """RK4 integration of moment_rhs on [0, T]; symmetrizes cov_qq/cov_pp."""
    from .dynamics import step_sizes

    sizes = step_sizes(T, dt)
    ms = ms0
    path = [(0.0, ms0)]
    t = 0.0
    for k, h in enumerate(sizes):
        k1 = moment_rhs(ms, kv, noise)
        k2 = moment_rhs(_axpy(ms, 0.5 * h, k1), kv, noise)
        k3 = moment_rhs(_axpy(ms, 0.5 * h, k2), kv, noise)
        k4 = moment_rhs(_axpy(ms, h, k3), kv, noise)
        ms = _rk4_combine(ms, h, k1, k2, k3, k4)
        t += h
        if not all(np.all(np.isfinite(v)) for v in
                   (ms.mean_q, ms.mean_p, ms.cov_qq, ms.cov_qp, ms.cov_pp)):
            raise NumericalError("non-finite moment state", step=k, t=t)
        if return_path:
            path.append((t, ms))
    if return_path:
        return ms, path
    return ms


def moment_cost(mean_p0, lambdas, targets: MomentTargets, gamma1: float, gamma2: float,
                kv: KernelSpec, noise_template: NoiseModel, mean_q0, T: float,
                dt: float) -> float:
    """Weighted mismatch of final mean and per-landmark covariance blocks.

    cost = (1/gamma1) mean_i |<q_i>_target - <q_i>(T)|^2
         + (1/gamma2) mean_i |C_i_target - C_i(T)|_F^2

    The per-landmark averaging makes every landmark contribute equally.
    """
    if gamma1 <= 0 or gamma2 <= 0:
        raise ValueError("gamma weights must be positive")
    noise = noise_template.with_lambdas(lambdas)
    ms0 = MomentState.zero_cov(np.asarray(mean_q0, dtype=float),
                               np.asarray(mean_p0, dtype=float))
    ms1 = integrate_moments(ms0, kv, noise, T, dt)
    dmean = targets.mean_q - ms1.mean_q
    mean_term = float(np.mean(np.sum(dmean**2, axis=-1)))
    dcov = targets.cov_blocks - ms1.landmark_cov_blocks()
    cov_term = float(np.mean(np.sum(dcov**2, axis=(-2, -1))))
    return mean_term / gamma1 + cov_term / gamma2


def moments_to_rows(path) -> list:
    """Rows (t, block, i, j, value) for CSV export of a moment trajectory."""
    rows = []
    for t, ms in path:
        for i in range(ms.n_landmarks):
            for a in range(ms.dim):
                rows.append([t, "mean_q", i, a, ms.mean_q[i, a]])
                rows.append([t, "mean_p", i, a, ms.mean_p[i, a]])
        for name in ("cov_qq", "cov_qp", "cov_pp"):
            block = getattr(ms, name)
            nd = block.shape[0]
            for i in range(nd):
                for j in range(nd):
                    rows.append([t, name, i, j, block[i, j]])
    return rows
