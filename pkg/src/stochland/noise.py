"""Noise models for the stochastic landmark system.

Two backends share one interface, the phase-space diffusion matrix
Sigma(q, p) mapping Brownian increments to (dq, dp) increments:

* Eulerian: J spatial fields sigma_l(x) = lambda_l * k(|x - delta_l|) fixed in
  the domain.  Column l of Sigma is the canonical Hamiltonian vector field of
  the momentum map Phi_l(q, p) = sum_i p_i . sigma_l(q_i).
* Lagrangian: a kernel matrix K(q) attached to the landmarks, with block
  (i, j) = diag(Lambda_j) k(|q_i - q_j|).  The dq-block of Sigma is K(q) and
  the dp-block is -d/dq_i (p_i . K(q)^i_{j,alpha}).

Row layout of Sigma: Nd dq-rows (landmark-major), then Nd dp-rows.  Columns:
J (Eulerian) or Nd (Lagrangian).  Everything broadcasts over leading batch
dimensions of q and p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import KernelSpec


@dataclass(frozen=True)
class EulerianNoise:
    """J spatial noise fields with shared kernel family.

    centers: (J, d) field centers delta_l
    lams:    (J, d) amplitude vectors lambda_l
    scales:  (J,)   kernel scales r_l
    """

    family: str
    centers: np.ndarray
    lams: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", np.atleast_2d(np.asarray(self.centers, dtype=float)))
        object.__setattr__(self, "lams", np.atleast_2d(np.asarray(self.lams, dtype=float)))
        object.__setattr__(self, "scales", np.atleast_1d(np.asarray(self.scales, dtype=float)))
        if self.centers.shape != self.lams.shape:
            raise ValueError("centers and lams must both be (J, d)")
        if self.scales.shape != (self.centers.shape[0],):
            raise ValueError("scales must be (J,)")
        if self.n_fields and np.any(self.scales <= 0):
            raise ValueError("all field scales must be positive")
        KernelSpec(self.family, 1.0)  # family name check

    @property
    def n_fields(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def with_lambdas(self, lams) -> "EulerianNoise":
        lams = np.asarray(lams, dtype=float).reshape(self.centers.shape)
        return EulerianNoise(self.family, self.centers, lams, self.scales)


@dataclass(frozen=True)
class LagrangianNoise:
    """Landmark-attached kernel noise with per-landmark diagonal amplitudes.

    lambdas: (N, d) amplitude of the noise injected by landmark j in each axis.
    """

    kernel: KernelSpec
    lambdas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lambdas", np.atleast_2d(np.asarray(self.lambdas, dtype=float)))

    @property
    def n_landmarks(self) -> int:
        return self.lambdas.shape[0]

    @property
    def dim(self) -> int:
        return self.lambdas.shape[1]

    def with_lambdas(self, lams) -> "LagrangianNoise":
        lams = np.asarray(lams, dtype=float).reshape(self.lambdas.shape)
        return LagrangianNoise(self.kernel, lams)


NoiseModel = EulerianNoise | LagrangianNoise


@dataclass(frozen=True)
class DiffusionMatrix:
    """Sigma(q, p): (..., 2Nd, M) map from Brownian increments to phase space."""

    matrix: np.ndarray
    n_landmarks: int
    dim: int

    @property
    def n_noise(self) -> int:
        return self.matrix.shape[-1]

    @property
    def dq_block(self) -> np.ndarray:
        nd = self.n_landmarks * self.dim
        return self.matrix[..., :nd, :]

    @property
    def dp_block(self) -> np.ndarray:
        nd = self.n_landmarks * self.dim
        return self.matrix[..., nd:, :]


def _unit(noise_family: str) -> KernelSpec:
    return KernelSpec(noise_family, 1.0)


def eulerian_parts(noise: EulerianNoise, q, order: int = 1):
    """Per (landmark, field) kernel values and radial factors.

    Returns (kappa, s[, k2], offset) where offset[..., i, l, :] = q_i - delta_l,
    kappa = k_l(r), s = k_l'(r)/r and (order 2 only) k2 = k_l''(r), all with the
    per-field scales folded in.
    """
    q = np.asarray(q, dtype=float)
    unit = _unit(noise.family)
    offset = q[..., :, None, :] - noise.centers[:, :]
    r = np.linalg.norm(offset, axis=-1)
    u = r / noise.scales
    kappa = kernels.value(unit, u)
    s = kernels.d1_over_r(unit, u) / noise.scales**2
    if order < 2:
        return kappa, s, offset
    k2 = kernels.d2(unit, u) / noise.scales**2
    return kappa, s, k2, offset


def sigma_fields(noise: EulerianNoise, q) -> np.ndarray:
    """sigma_l(q_i) for all landmarks and fields, shape (..., N, d, J)."""
    q = np.asarray(q, dtype=float)
    if noise.n_fields == 0:
        return np.zeros(q.shape + (0,))
    kappa, _, _ = eulerian_parts(noise, q)
    return np.einsum("...il,la->...ial", kappa, noise.lams)


def momentum_map(noise: EulerianNoise, state, l: int) -> float:
    """Phi_l(q, p) = sum_i p_i . sigma_l(q_i)."""
    sig = sigma_fields(noise, state.q)
    return float(np.einsum("...ia,...ia->...", state.p, sig[..., l]))


def _build_sigma_eulerian(noise: EulerianNoise, q, p) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    batch = q.shape[:-2]
    n, d = q.shape[-2:]
    J = noise.n_fields
    if J == 0:
        return np.zeros(batch + (2 * n * d, 0))
    kappa, s, offset = eulerian_parts(noise, q)
    # dq rows: lambda_l^a k_l(|q_i - delta_l|)
    dq = np.einsum("...il,la->...ial", kappa, noise.lams)
    # dp rows: -(p_i . lambda_l) * grad k_l(q_i), grad k = s * offset
    pl = np.einsum("...ia,la->...il", p, noise.lams)
    grads = s[..., None] * offset
    dp = -np.einsum("...il,...ilb->...ibl", pl, grads)
    top = dq.reshape(batch + (n * d, J))
    bot = dp.reshape(batch + (n * d, J))
    return np.concatenate([top, bot], axis=-2)


def lagrangian_parts(noise: LagrangianNoise, q, order: int = 1):
    """Pairwise kernel values/gradients for the landmark kernel matrix."""
    q = np.asarray(q, dtype=float)
    diff = q[..., :, None, :] - q[..., None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    k = kernels.value(noise.kernel, r)
    s = kernels.d1_over_r(noise.kernel, r)
    grads = s[..., None] * diff  # G_ij = grad_1 k(q_i - q_j)
    if order < 2:
        return k, grads, diff
    return k, grads, kernels.d2(noise.kernel, r), s, diff


def spatial_covariance_root(noise: LagrangianNoise, q) -> np.ndarray:
    """The landmark kernel matrix K(q), shape (..., Nd, Nd).

    Entry ((i,a), (j,b)) = delta_ab Lambda_j^b k(|q_i - q_j|).  Used directly
    as the dq-block noise map.
    """
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-2]
    n, d = q.shape[-2:]
    k, _, _ = lagrangian_parts(noise, q)
    eye = np.eye(d)
    blocks = np.einsum("...ij,jb,ab->...iajb", k, noise.lambdas, eye)
    return blocks.reshape(batch + (n * d, n * d))


def _build_sigma_lagrangian(noise: LagrangianNoise, q, p) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    batch = q.shape[:-2]
    n, d = q.shape[-2:]
    top = spatial_covariance_root(noise, q)
    # dp rows: row (i,b), column (j,a): -p_i^a Lambda_j^a G_ij^b (zero at i=j).
    _, grads, _ = lagrangian_parts(noise, q)
    dp = -np.einsum("...ia,ja,...ijb->...ibja", p, noise.lambdas, grads)
    bot = dp.reshape(batch + (n * d, n * d))
    return np.concatenate([top, bot], axis=-2)


def build_sigma(noise: NoiseModel, q, p) -> DiffusionMatrix:
    """Assemble the full diffusion matrix Sigma(q, p)."""
    q = np.asarray(q, dtype=float)
    n, d = q.shape[-2:]
    if isinstance(noise, EulerianNoise):
        m = _build_sigma_eulerian(noise, q, p)
    else:
        m = _build_sigma_lagrangian(noise, q, p)
    return DiffusionMatrix(matrix=m, n_landmarks=n, dim=d)


def sigma_squared(noise: NoiseModel, q, p) -> np.ndarray:
    """Sigma Sigma^T, symmetric PSD, shape (..., 2Nd, 2Nd)."""
    m = build_sigma(noise, q, p).matrix
    return np.einsum("...im,...jm->...ij", m, m)


def drift_correction(noise: NoiseModel, q, p):
    """Stratonovich -> Ito drift correction 1/2 sum_m (dSigma_m/dX) Sigma_m.

    Returns (c_q, c_p), each (..., N, d), derived analytically from the kernel
    radial derivatives (see docs/moment_equations.md for the closed forms).
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if isinstance(noise, EulerianNoise):
        if noise.n_fields == 0:
            return np.zeros_like(q), np.zeros_like(p)
        kappa, s, k2, offset = eulerian_parts(noise, q, order=2)
        grads = s[..., None] * offset  # g_l(q_i)
        glam = np.einsum("...ilb,lb->...il", grads, noise.lams)  # g . lambda
        c_q = 0.5 * np.einsum("...il,...il,la->...ia", kappa, glam, noise.lams)
        # H_l(q_i) lambda_l = s lambda + ((k2 - s)/r^2) (offset . lambda) offset
        r2 = np.einsum("...ilb,...ilb->...il", offset, offset)
        safe = np.where(r2 > 0, r2, 1.0)
        coef = np.where(r2 > 0, (k2 - s) / safe, 0.0)
        xl = np.einsum("...ilb,lb->...il", offset, noise.lams)
        hlam = s[..., None] * noise.lams + (coef * xl)[..., None] * offset
        pl = np.einsum("...ia,la->...il", p, noise.lams)
        c_p = 0.5 * np.einsum("...il,...ilb->...ib", pl * glam, grads) \
            - 0.5 * np.einsum("...il,...il,...ilb->...ib", pl, kappa, hlam)
        return c_q, c_p
    # Lagrangian backend.
    k, grads, k2, s, diff = lagrangian_parts(noise, q, order=2)
    k0 = float(kernels.value(noise.kernel, 0.0))
    lam2 = noise.lambdas**2  # (N, d), row j
    dk = k - k0
    c_q = 0.5 * np.einsum("jg,...ijg,...ij->...ig", lam2, grads, dk)
    # H_ij^{ba} from the radial decomposition
    r2 = np.einsum("...ijb,...ijb->...ij", diff, diff)
    safe = np.where(r2 > 0, r2, 1.0)
    coef = np.where(r2 > 0, (k2 - s) / safe, 0.0)
    # sum_{j,a} lam2[j,a] p_i^a (G^a G^b - H^{ba} (k_ij - k0))
    gg = np.einsum("...ia,ja,...ija,...ijb->...ib", p, lam2, grads, grads)
    # H^{ba} = s delta_ab + coef diff^b diff^a
    plam = np.einsum("...ia,ja->...ija", p, lam2)
    h_iso = np.einsum("...ijb,...ij,...ij->...ib", plam, s, dk)
    xdot = np.einsum("...ija,...ija->...ij", plam, diff)
    h_rad = np.einsum("...ij,...ij,...ij,...ijb->...ib", xdot, coef, dk, diff)
    c_p = 0.5 * gg - 0.5 * (h_iso + h_rad)
    return c_q, c_p
