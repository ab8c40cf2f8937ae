"""Stochastic integrators for the landmark system.

The Stratonovich system

    dq_i = dh/dp_i dt + sum_l sigma_l(q_i) o dW^l
    dp_i = -dh/dq_i dt - sum_l d/dq_i (p_i . sigma_l(q_i)) o dW^l

is integrated either with a Heun predictor-corrector step (Stratonovich, the
default) or with Euler-Maruyama on the equivalent Ito form, whose drift adds
the correction 1/2 sum_m (dSigma_m/dX) Sigma_m.

Ensembles draw per-sample noise from deterministically derived sub-seeds, so
results are reproducible regardless of batch size or scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, noise as noise_mod
from .dynamics import PhaseState, Trajectory, step_sizes
from .errors import NumericalError
from .kernels import KernelSpec
from .noise import NoiseModel

HEUN_STRATONOVICH = "heun_stratonovich"
EULER_MARUYAMA_ITO = "euler_maruyama_ito"

_SCHEMES = (HEUN_STRATONOVICH, EULER_MARUYAMA_ITO)

_CHUNK = 512


@dataclass(frozen=True)
class SdeConfig:
    dt: float
    T: float
    scheme: str = HEUN_STRATONOVICH
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0 or self.dt > self.T:
            raise ValueError("need 0 < dt <= T")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {_SCHEMES}")


@dataclass
class EnsembleSummary:
    mean_q: np.ndarray          # (N, d)
    cov_qq: np.ndarray          # (Nd, Nd) centered sample covariance
    n_samples: int


def pack(q, p) -> np.ndarray:
    """Stack (q, p) into a flat phase vector of shape (..., 2Nd)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    batch = q.shape[:-2]
    nd = q.shape[-2] * q.shape[-1]
    return np.concatenate([q.reshape(batch + (nd,)), p.reshape(batch + (nd,))], axis=-1)


def unpack(x, n: int, d: int):
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    nd = n * d
    return x[..., :nd].reshape(batch + (n, d)), x[..., nd:].reshape(batch + (n, d))


def drift(q, p, kv: KernelSpec, noise: NoiseModel | None, ito: bool):
    """Phase-space drift (dq/dt, dp/dt); adds the Ito correction if requested."""
    fq, fp = dynamics.canonical_drift(q, p, kv)
    if ito and noise is not None:
        cq, cp = noise_mod.drift_correction(noise, q, p)
        fq = fq + cq
        fp = fp + cp
    return fq, fp


def ito_drift_correction(state: PhaseState, noise: NoiseModel) -> np.ndarray:
    """The Stratonovich -> Ito drift correction as a flat 2Nd vector."""
    cq, cp = noise_mod.drift_correction(noise, state.q, state.p)
    return pack(cq, cp)


def _apply_sigma(noise: NoiseModel, q, p, dw):
    """Sigma(q, p) dW split into (q, p) increments of shape (..., N, d)."""
    n, d = q.shape[-2:]
    sig = noise_mod.build_sigma(noise, q, p).matrix
    inc = np.einsum("...im,...m->...i", sig, dw)
    return unpack(inc, n, d)


def heun_step(q, p, kv: KernelSpec, noise: NoiseModel, dt: float, dw):
    """One Stratonovich Heun step; q, p (..., N, d), dw (..., M)."""
    fq, fp = drift(q, p, kv, noise, ito=False)
    gq, gp = _apply_sigma(noise, q, p, dw)
    q1 = q + dt * fq + gq
    p1 = p + dt * fp + gp
    fq1, fp1 = drift(q1, p1, kv, noise, ito=False)
    gq1, gp1 = _apply_sigma(noise, q1, p1, dw)
    qn = q + 0.5 * dt * (fq + fq1) + 0.5 * (gq + gq1)
    pn = p + 0.5 * dt * (fp + fp1) + 0.5 * (gp + gp1)
    return qn, pn


def euler_maruyama_step(q, p, kv: KernelSpec, noise: NoiseModel, dt: float, dw):
    """One Euler-Maruyama step of the Ito form (drift correction included)."""
    fq, fp = drift(q, p, kv, noise, ito=True)
    gq, gp = _apply_sigma(noise, q, p, dw)
    return q + dt * fq + gq, p + dt * fp + gp


def step_stratonovich(state: PhaseState, kv: KernelSpec, noise: NoiseModel,
                      dt: float, dw) -> PhaseState:
    q, p = heun_step(state.q, state.p, kv, noise, dt, np.asarray(dw, dtype=float))
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise NumericalError("non-finite state after Stratonovich step", t=state.t)
    return PhaseState(q, p, state.t + dt)


def noise_dim(noise: NoiseModel, n_landmarks: int, d: int) -> int:
    if isinstance(noise, noise_mod.EulerianNoise):
        return noise.n_fields
    return n_landmarks * d


def sample_increments(seed: int, sample_index, n_steps: int, m: int,
                      attempt: int = 0) -> np.ndarray:
    """Standard-normal increments for one sample path, (n_steps, m).

    sample_index may be an int or a tuple key.  Derived from
    (seed, sample_index, attempt) only, so ensembles are deterministic for any
    batching of the samples.
    """
    key = sample_index if isinstance(sample_index, tuple) else (sample_index,)
    if attempt != 0:
        key = key + (attempt,)
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.default_rng(ss).standard_normal((n_steps, m))


def batch_increments(seed: int, sample_indices, n_steps: int, m: int,
                     attempt: int = 0) -> np.ndarray:
    """Per-sample increments stacked into (B, n_steps, m)."""
    return np.stack([
        sample_increments(seed, idx, n_steps, m, attempt) for idx in sample_indices
    ])


def _step_fn(scheme: str):
    return heun_step if scheme == HEUN_STRATONOVICH else euler_maruyama_step


def integrate_sde(state0: PhaseState, kv: KernelSpec, noise: NoiseModel,
                  cfg: SdeConfig, sample_index: int = 0) -> Trajectory:
    """One sample path on [state0.t, state0.t + T], recorded at every step."""
    sizes = step_sizes(cfg.T, cfg.dt)
    m = noise_dim(noise, state0.n_landmarks, state0.dim)
    normals = sample_increments(cfg.seed, sample_index, len(sizes), m)
    step = _step_fn(cfg.scheme)
    n = len(sizes)
    q = np.empty((n + 1,) + state0.q.shape)
    p = np.empty_like(q)
    times = np.empty(n + 1)
    q[0], p[0], times[0] = state0.q, state0.p, state0.t
    for k, h in enumerate(sizes):
        dw = np.sqrt(h) * normals[k]
        q[k + 1], p[k + 1] = step(q[k], p[k], kv, noise, h, dw)
        times[k + 1] = times[k] + h
        if not (np.all(np.isfinite(q[k + 1])) and np.all(np.isfinite(p[k + 1]))):
            raise NumericalError("non-finite state during SDE integration",
                                 step=k, t=float(times[k + 1]))
    return Trajectory(times=times, q=q, p=p)


def _integrate_batch(q0, p0, kv, noise, cfg: SdeConfig, sample_indices) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of a batch of independent paths, (B, N, d) each for q and p."""
    sizes = step_sizes(cfg.T, cfg.dt)
    n, d = q0.shape[-2:]
    m = noise_dim(noise, n, d)
    normals = np.stack(
        [sample_increments(cfg.seed, idx, len(sizes), m) for idx in sample_indices]
    )  # (B, n_steps, M)
    b = len(sample_indices)
    q = np.broadcast_to(q0, (b, n, d)).copy()
    p = np.broadcast_to(p0, (b, n, d)).copy()
    step = _step_fn(cfg.scheme)
    t = 0.0
    for k, h in enumerate(sizes):
        dw = np.sqrt(h) * normals[:, k, :]
        q, p = step(q, p, kv, noise, h, dw)
        t += h
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise NumericalError("non-finite state during ensemble integration",
                                 step=k, t=t)
    return q, p


def sample_ensemble(state0: PhaseState, kv: KernelSpec, noise: NoiseModel,
                    cfg: SdeConfig, n: int, return_endpoints: bool = False):
    """Integrate n independent paths; final-time mean and centered covariance.

    Returns EnsembleSummary, or (EnsembleSummary, endpoints (n, N, d)) when
    return_endpoints is set.
    """
    if n < 2:
        raise ValueError("need at least 2 samples")
    nl, d = state0.q.shape[-2:]
    endpoints = np.empty((n, nl, d))
    for start in range(0, n, _CHUNK):
        idx = range(start, min(start + _CHUNK, n))
        qb, _ = _integrate_batch(state0.q, state0.p, kv, noise, cfg, idx)
        endpoints[start:start + len(qb)] = qb
    flat = endpoints.reshape(n, nl * d)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / (n - 1)
    summary = EnsembleSummary(mean_q=mean.reshape(nl, d), cov_qq=cov, n_samples=n)
    if return_endpoints:
        return summary, endpoints
    return summary
