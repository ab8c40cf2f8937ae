"""Monte-Carlo EM for the template, momenta and noise amplitudes.

The E-step draws guided bridges per observation under the current parameters
and caches them (paths plus self-normalized weights).  The Q function
re-scores the cached paths' position-increment Gaussians under candidate
parameters:

    Q(theta') = sum_i E_w [ sum_k log N(dq_k; a_q(theta') h_k, S_qq(theta') h_k)
                            + log N(v_i; predicted endpoint, (T - tau) S_qq) ]

with the first step anchored at the candidate template (Y_0 := q0', p0').
Position increments carry the full noise information when the dq noise map has
full rank (always true for the Lagrangian backend); momentum increments are a
deterministic function of the same Brownian increments and are not scored
separately.  Template updates through the anchored first step are O(h/T)
contractions per iteration -- a known EM property for finely discretized
paths -- so q0 is initialized at the Euclidean mean and refined slowly while
the amplitudes converge at the normal rate.

The M-step maximizes Q over bounded parameters with a small differential
evolution warm-started at the previous theta; frozen samples make it a
deterministic optimization.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bridge as bridge_mod, dynamics, kernels, noise as noise_mod, sde
from .bridge import BridgeConfig, derive_seed
from .dynamics import PhaseState
from .kernels import KernelSpec
from .noise import EulerianNoise, LagrangianNoise, NoiseModel
from .optimize import DeConfig, minimize
from .params import Theta


@dataclass
class EmConfig:
    bridge: BridgeConfig
    lambda_bounds: tuple[float, float] = (1e-4, 2.0)
    q0_halfwidth: float = 0.5
    estimate_p0: bool = False
    p0_bounds: tuple[float, float] = (-2.0, 2.0)
    max_iters: int = 30
    tol: float = 1e-3
    tol_consecutive: int = 3
    m_generations: int = 20
    m_population: int | None = None
    seed: int = 0


@dataclass
class EmIteration:
    theta: Theta
    q_at_prev: float      # Q(theta_{l-1} | theta_{l-1})
    q_value: float        # Q(theta_l | theta_{l-1})
    mean_ess: float
    wall_time: float


@dataclass
class EmTrace:
    iterations: list[EmIteration] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.iterations)

    def to_rows(self) -> list:
        """CSV rows (iteration, parameter_name, value, Q_estimate, ess)."""
        rows = []
        for it, rec in enumerate(self.iterations):
            names_values = []
            for i, row in enumerate(rec.theta.q0):
                for a, val in enumerate(row):
                    names_values.append((f"q0[{i}][{a}]", val))
            for j, row in enumerate(np.atleast_2d(rec.theta.lambdas)):
                for a, val in enumerate(row):
                    names_values.append((f"lambda[{j}][{a}]", val))
            for name, val in names_values:
                rows.append([it, name, float(val), rec.q_value, rec.mean_ess])
        return rows


def _dq_noise_map(noise: NoiseModel, q):
    """The dq-block of Sigma, shape (..., Nd, M)."""
    n, d = q.shape[-2:]
    if isinstance(noise, EulerianNoise):
        sig = noise_mod.sigma_fields(noise, q)              # (..., N, d, J)
        return sig.reshape(q.shape[:-2] + (n * d, noise.n_fields))
    return noise_mod.spatial_covariance_root(noise, q)


def _batch_gaussian_logpdf(z, mean, cov, jitter_rel: float = 1e-10):
    """log N(z; mean, cov) batched over leading dims, with a diagonal jitter floor."""
    k = cov.shape[-1]
    diag_mean = np.einsum("...ii->...", cov) / k
    jit = jitter_rel * np.maximum(diag_mean, 1e-300)
    cov = cov + jit[..., None, None] * np.eye(k)
    diff = z - mean
    chol = np.linalg.cholesky(cov)
    if k <= 8:
        # vectorized forward substitution beats a second LAPACK pass
        y = np.empty_like(diff)
        for i in range(k):
            acc = diff[..., i]
            for j in range(i):
                acc = acc - chol[..., i, j] * y[..., j]
            y[..., i] = acc / chol[..., i, i]
        quad = np.sum(y**2, axis=-1)
    else:
        sol = np.linalg.solve(cov, diff[..., None])[..., 0]
        quad = np.einsum("...i,...i->...", diff, sol)
    logdet = 2.0 * np.sum(np.log(np.einsum("...ii->...i", chol)), axis=-1)
    return -0.5 * (quad + logdet + k * np.log(2.0 * np.pi))


class _QqCoeffs:
    """Amplitude-independent kernel tensors at a batch of states.

    Lets candidate evaluations assemble the position-block diffusion
    S_qq(theta') and Ito correction c_q(theta') with single einsums.
    """

    def __init__(self, noise_template: NoiseModel, q, p):
        self.template = noise_template
        n, d = q.shape[-2:]
        self.n, self.d = n, d
        if isinstance(noise_template, EulerianNoise):
            kappa, s, offset = noise_mod.eulerian_parts(noise_template, q)
            self.kap = kappa                       # (..., N, J)
            self.grads = s[..., None] * offset     # (..., N, J, d)
        else:
            k, grads, _ = noise_mod.lagrangian_parts(noise_template, q)
            k0 = float(kernels.value(noise_template.kernel, 0.0))
            self.kmat = k                          # (..., N, N), k_im
            self.w = grads * (k - k0)[..., None]   # G_ij (k_ij - k0)

    def s_qq(self, lams) -> np.ndarray:
        """[Sigma Sigma^T]_qq as (..., Nd, Nd)."""
        n, d = self.n, self.d
        if isinstance(self.template, EulerianNoise):
            blocks = np.einsum("...il,...jl,la,lb->...iajb",
                               self.kap, self.kap, lams, lams)
            batch = blocks.shape[:-4]
            return blocks.reshape(batch + (n * d, n * d))
        lam2 = lams**2
        core = np.einsum("...im,...jm,ma->...ija", self.kmat, self.kmat, lam2)
        batch = core.shape[:-3]
        out = np.zeros(batch + (n, d, n, d))
        for a in range(d):
            out[..., :, a, :, a] = core[..., a]
        return out.reshape(batch + (n * d, n * d))

    def c_q(self, lams) -> np.ndarray:
        """Position part of the Ito drift correction, (..., N, d)."""
        if isinstance(self.template, EulerianNoise):
            return 0.5 * np.einsum("...il,...ilb,lb,la->...ia",
                                   self.kap, self.grads, lams, lams)
        return 0.5 * np.einsum("...ijg,jg->...ig", self.w, lams**2)


class QFunction:
    """Q(theta' | theta_prev) evaluated on cached bridge samples.

    States, increments, the canonical drift and the amplitude-independent
    kernel tensors are flattened across (observation, step >= 1, sample) once;
    a candidate evaluation assembles drift and diffusion with einsums and
    scores batched Gaussians.
    """

    def __init__(self, targets, times, qs, ps, weights, esses, kv: KernelSpec,
                 noise_template: NoiseModel, T: float, n_pred_steps: int):
        # qs, ps: (K+1, G, B, N, d); weights: (G, B) normalized per observation.
        self.kv = kv
        self.template = noise_template
        self.T = T
        self.weights = weights
        self.esses = esses
        self.targets = np.asarray(targets, dtype=float)
        k1, g, b, n, d = qs.shape
        self._shape = (g, b, n, d)
        kk = k1 - 1
        h = np.diff(times)
        self._tau = float(times[-1])
        self._h0 = float(h[0])
        self._flat_q = qs[1:-1].reshape((kk - 1) * g * b, n, d)
        flat_p = ps[1:-1].reshape((kk - 1) * g * b, n, d)
        self._flat_dq = np.diff(qs[1:], axis=0).reshape((kk - 1) * g * b, n * d)
        self._flat_h = np.repeat(h[1:], g * b)
        fq, _ = dynamics.canonical_drift(self._flat_q, flat_p, kv)
        self._flat_canon = fq.reshape(-1, n * d)
        self._coeffs = _QqCoeffs(noise_template, self._flat_q, flat_p)
        self._q1 = qs[1].copy()
        pred, _ = dynamics.integrate_canonical(
            qs[-1].reshape(g * b, n, d), ps[-1].reshape(g * b, n, d),
            kv, T - self._tau, n_pred_steps)
        self._pred_end = pred.reshape(g * b, n * d)
        self._coeffs_end = _QqCoeffs(noise_template, qs[-1].reshape(g * b, n, d),
                                     ps[-1].reshape(g * b, n, d))

    def __call__(self, theta: Theta) -> float:
        g, b, n, d = self._shape
        nd = n * d
        lams = np.asarray(theta.lambdas, dtype=float)
        a_q = self._flat_canon + self._coeffs.c_q(lams).reshape(-1, nd)
        cov = self._coeffs.s_qq(lams) * self._flat_h[:, None, None]
        logp = _batch_gaussian_logpdf(self._flat_dq, a_q * self._flat_h[:, None], cov)
        per_sample = logp.reshape(-1, g, b).sum(axis=0)
        # anchored first step: one state (q0', p0') for every sample
        noise = self.template.with_lambdas(lams)
        fq0, _ = dynamics.canonical_drift(theta.q0, theta.p0, self.kv)
        cq0, _ = noise_mod.drift_correction(noise, theta.q0, theta.p0)
        a0 = (fq0 + cq0).reshape(nd)
        bq0 = _dq_noise_map(noise, theta.q0)
        cov0 = (bq0 @ bq0.T) * self._h0
        dq0 = (self._q1 - theta.q0).reshape(g * b, nd)
        lp0 = _batch_gaussian_logpdf(dq0, a0 * self._h0, cov0)
        per_sample += lp0.reshape(g, b)
        # endpoint factor over [tau, T]
        s_end = self._coeffs_end.s_qq(lams)
        flat_v = np.repeat(self.targets.reshape(g, nd), b, axis=0)
        lp_end = _batch_gaussian_logpdf(
            flat_v, self._pred_end, (self.T - self._tau) * s_end)
        per_sample += lp_end.reshape(g, b)
        return float(np.sum(self.weights * per_sample))

    @property
    def mean_ess(self) -> float:
        return float(np.mean(self.esses))


def e_step(theta_prev: Theta, observations, kv: KernelSpec, T: float,
           bridge_cfg: BridgeConfig, noise_template: NoiseModel) -> QFunction:
    """Draw and cache guided bridges per observation; return the Q function."""
    observations = np.asarray(observations, dtype=float)
    noise = noise_template.with_lambdas(theta_prev.lambdas)
    state0 = PhaseState(theta_prev.q0, theta_prev.p0)
    times, qs, ps, logw, _ = bridge_mod.sample_bridges_multi(
        state0, kv, noise, observations, T, bridge_cfg, bridge_cfg.n_samples)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    esses = 1.0 / np.sum(w**2, axis=1)
    return QFunction(observations, times, qs, ps, w, esses, kv, noise_template,
                     T, bridge_cfg.n_pred_steps)


def _pack_theta(theta: Theta, cfg: EmConfig):
    parts = [theta.q0.ravel(), theta.lambdas.ravel()]
    if cfg.estimate_p0:
        parts.append(theta.p0.ravel())
    return np.concatenate(parts)


def _unpack_theta(x, like: Theta, cfg: EmConfig) -> Theta:
    nq = like.q0.size
    nl = like.lambdas.size
    q0 = x[:nq].reshape(like.q0.shape)
    lams = x[nq:nq + nl].reshape(like.lambdas.shape)
    p0 = x[nq + nl:].reshape(like.p0.shape) if cfg.estimate_p0 else like.p0.copy()
    return Theta(q0, p0, lams)


def _theta_bounds(theta: Theta, cfg: EmConfig) -> np.ndarray:
    lo_q = theta.q0.ravel() - cfg.q0_halfwidth
    hi_q = theta.q0.ravel() + cfg.q0_halfwidth
    bounds = [np.stack([lo_q, hi_q], axis=1),
              np.tile(np.asarray(cfg.lambda_bounds, dtype=float), (theta.lambdas.size, 1))]
    if cfg.estimate_p0:
        bounds.append(np.tile(np.asarray(cfg.p0_bounds, dtype=float), (theta.p0.size, 1)))
    return np.concatenate(bounds, axis=0)


def m_step(q_fn, theta_prev: Theta, cfg: EmConfig, seed: int) -> tuple[Theta, float]:
    """Maximize Q within bounds; small DE warm-started at theta_prev.

    Solutions sitting on a bound are flagged with a warning (the bound, not
    the data, is then determining that parameter).
    """
    bounds = _theta_bounds(theta_prev, cfg)
    x0 = np.clip(_pack_theta(theta_prev, cfg), bounds[:, 0], bounds[:, 1])

    def objective(x):
        return -q_fn(_unpack_theta(x, theta_prev, cfg))

    de_cfg = DeConfig(generations=cfg.m_generations, bounds=bounds,
                      population=cfg.m_population or max(12, 4 * bounds.shape[0] // 2),
                      f=0.5, cr=0.9, seed=seed, polish_steps=5)
    res = minimize(objective, de_cfg, x0=x0)
    span = bounds[:, 1] - bounds[:, 0]
    on_edge = (res.best_x <= bounds[:, 0] + 1e-9 * span) \
        | (res.best_x >= bounds[:, 1] - 1e-9 * span)
    if np.any(on_edge):
        warnings.warn(f"M-step solution sits on the bounds for {int(on_edge.sum())} "
                      f"parameter(s)", RuntimeWarning, stacklevel=2)
    return _unpack_theta(res.best_x, theta_prev, cfg), -res.best_f


def fit_em(observations, init: Theta, kv: KernelSpec, noise_template: NoiseModel,
           T: float, cfg: EmConfig) -> tuple[Theta, EmTrace]:
    """Iterate E and M steps until the amplitudes stabilize.

    Convergence: relative lambda change below cfg.tol for cfg.tol_consecutive
    consecutive iterations, else stop at max_iters with converged=False.
    """
    observations = np.asarray(observations, dtype=float)
    if len(observations) < 2:
        raise ValueError("need at least 2 observations")
    theta = init.copy()
    trace = EmTrace()
    quiet = 0
    for it in range(cfg.max_iters):
        t0 = time.perf_counter()
        bcfg = BridgeConfig(
            n_steps=cfg.bridge.n_steps, epsilon_end=cfg.bridge.epsilon_end,
            n_samples=cfg.bridge.n_samples, n_pred_steps=cfg.bridge.n_pred_steps,
            seed=derive_seed(cfg.seed, 11, it), clip_drift=cfg.bridge.clip_drift,
            retries=cfg.bridge.retries, cov_floor=cfg.bridge.cov_floor)
        q_fn = e_step(theta, observations, kv, T, bcfg, noise_template)
        q_prev = q_fn(theta)
        theta_next, q_next = m_step(q_fn, theta, cfg, seed=derive_seed(cfg.seed, 13, it))
        rel = np.max(np.abs(theta_next.lambdas - theta.lambdas)
                     / np.maximum(np.abs(theta.lambdas), 1e-12))
        trace.iterations.append(EmIteration(
            theta=theta_next.copy(), q_at_prev=q_prev, q_value=q_next,
            mean_ess=q_fn.mean_ess, wall_time=time.perf_counter() - t0))
        theta = theta_next
        quiet = quiet + 1 if rel < cfg.tol else 0
        if quiet >= cfg.tol_consecutive:
            trace.converged = True
            break
    return theta, trace
