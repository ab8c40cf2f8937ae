"""Guided diffusion bridges: conditioning on observed landmark positions.

A path is forced toward the target v by adding the drift

    -Sigma^2(q, p) r(t) / (T - t),   r(t) = (predicted endpoint - v, 0)

to the Ito form of the landmark SDE, where the predicted endpoint runs the
deterministic canonical flow from the current state to time T.  The forcing is
a time-rescaled gradient flow: it equals the Sigma^2-preconditioned gradient of
1/2 |predicted endpoint - v|^2 (taken in the predicted endpoint), divided by
T - t.

Each sample carries a log correction weight so that weighted averages over
guided paths recover conditional expectations under the unguided model.  The
weight is the exact likelihood ratio between the guided and unguided
Euler chains,

    dG_k = rho_k . (dX_k - a_k dt_k) + (dt_k / 2) rho_k . Sigma^2_k rho_k,

(rho = r/(T-t); only position components of rho are nonzero, so no inverse of
Sigma is ever needed), plus a short-horizon Gaussian factor at the cutoff
tau = T (1 - epsilon_end) that accounts for hitting v over the remaining time:
N(v; predicted endpoint at tau, (T - tau) [Sigma^2]_qq).  log_weight stores
this up to a common v-dependent reference factor, which log_likelihood
multiplies back.  The pure-Brownian reduction (zero Hamiltonian, constant
diagonal noise) reproduces exact Brownian-bridge statistics and transition
densities; the acceptance suite gates on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, noise as noise_mod, sde
from .dynamics import PhaseState, Trajectory
from .errors import NumericalError
from .kernels import KernelSpec
from .noise import NoiseModel
from .params import Theta

_REFINE_RATIO = 0.8  # geometric step shrink factor near the cutoff


@dataclass(frozen=True)
class BridgeConfig:
    n_steps: int = 100
    epsilon_end: float = 0.02
    n_samples: int = 256
    n_pred_steps: int = 10
    seed: int = 0
    clip_drift: float | None = None   # optional norm clip of the model drift
    retries: int = 3
    cov_floor: float = 1e-10          # relative eigenvalue floor for endpoint Gaussians

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if not (0.0 < self.epsilon_end <= 0.1):
            raise ValueError("epsilon_end must lie in (0, 0.1]")


@dataclass
class BridgeSample:
    path: Trajectory
    log_weight: float
    endpoint_gap: float


@dataclass
class BridgeEstimate:
    value: float
    ess: float
    n_samples: int

    @property
    def degenerate(self) -> bool:
        return self.ess < 2.0


def derive_seed(seed: int, *key: int) -> int:
    """A deterministic sub-seed for nested sampling stages."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def content_key(v) -> int:
    """A stable uint64 key derived from an observation's values.

    Using content rather than list position keeps estimates exactly invariant
    under permutations of the observation list.
    """
    import hashlib

    digest = hashlib.sha256(np.ascontiguousarray(v, dtype=float).tobytes()).digest()
    return int.from_bytes(digest[:8], "little")


def time_grid(T: float, cfg: BridgeConfig) -> np.ndarray:
    """Step sizes covering [0, T(1 - epsilon_end)].

    Roughly the first 80% of the steps are uniform; the last 20% shrink
    geometrically toward the cutoff, mirroring the time rescaling that slows
    the flow down near T.
    """
    tau = T * (1.0 - cfg.epsilon_end)
    k2 = max(1, cfg.n_steps // 5)
    k1 = cfg.n_steps - k2
    gamma = _REFINE_RATIO
    tail = gamma * (1.0 - gamma**k2) / (1.0 - gamma)
    h1 = tau / (k1 + tail)
    sizes = np.concatenate([np.full(k1, h1), h1 * gamma ** np.arange(1, k2 + 1)])
    # close the tiny float residual on the last step
    sizes[-1] += tau - sizes.sum()
    return sizes


def gaussian_logpdf_psd(x, mean, cov, rel_floor: float = 1e-10) -> np.ndarray:
    """Log-density of N(mean, cov) with eigenvalue flooring for PSD covariances.

    Batched over leading dimensions of mean/cov.  Eigenvalues below
    rel_floor * max_eig are floored, which both regularizes near-singular
    covariances and penalizes components off the support.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    w, vecs = np.linalg.eigh(cov)
    wmax = np.maximum(w[..., -1], 1e-300)
    w = np.maximum(w, (rel_floor * wmax)[..., None])
    diff = x - mean
    proj = np.einsum("...ij,...i->...j", vecs, diff)
    quad = np.sum(proj**2 / w, axis=-1)
    logdet = np.sum(np.log(w), axis=-1)
    k = cov.shape[-1]
    return -0.5 * (quad + logdet + k * np.log(2.0 * np.pi))


def logsumexp(a, axis=None):
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def _guidance(q, p, kv, noise, v, t, T, n_pred_steps):
    """Guidance drift u, weight vector w = Sigma^T rho, and rho_q.

    q, p: (..., N, d); returns (u_q, u_p, w, rho_q, sig) with sig the
    DiffusionMatrix reused by the caller.
    """
    n, d = q.shape[-2:]
    pred, _ = dynamics.integrate_canonical(q, p, kv, T - t, n_pred_steps)
    rho_q = (pred - v) / (T - t)                       # (..., N, d)
    sig = noise_mod.build_sigma(noise, q, p)
    batch = q.shape[:-2]
    rho_flat = rho_q.reshape(batch + (n * d,))
    w = np.einsum("...im,...i->...m", sig.dq_block, rho_flat)
    u = -np.einsum("...im,...m->...i", sig.matrix, w)  # (..., 2Nd)
    u_q, u_p = sde.unpack(u, n, d)
    return u_q, u_p, w, rho_q, sig


def _model_drift(q, p, kv, noise, clip):
    fq, fp = sde.drift(q, p, kv, noise, ito=True)
    if clip is not None:
        flat = sde.pack(fq, fp)
        norm = np.linalg.norm(flat, axis=-1, keepdims=True)
        scale = np.minimum(1.0, clip / np.maximum(norm, 1e-300))
        fq = fq * scale[..., None]
        fp = fp * scale[..., None]
    return fq, fp


def _guided_step_batch(q, p, kv, noise, v, t, dt, dw, T, cfg: BridgeConfig):
    """One Euler-Maruyama guided step on a batch; returns states and dG."""
    fq, fp = _model_drift(q, p, kv, noise, cfg.clip_drift)
    u_q, u_p, w, rho_q, sig = _guidance(q, p, kv, noise, v, t, T, cfg.n_pred_steps)
    gq, gp = sde.unpack(np.einsum("...im,...m->...i", sig.matrix, dw),
                        q.shape[-2], q.shape[-1])
    qn = q + dt * (fq + u_q) + gq
    pn = p + dt * (fp + u_p) + gp
    zq_minus_drift = qn - q - dt * fq
    dg = np.einsum("...ia,...ia->...", rho_q, zq_minus_drift) \
        + 0.5 * dt * np.sum(w**2, axis=-1)
    return qn, pn, dg


def guided_step(state: PhaseState, kv: KernelSpec, noise: NoiseModel, v, dt: float,
                dw, T: float, cfg: BridgeConfig | None = None):
    """Single guided step from state.t; returns (new state, log-weight increment)."""
    cfg = cfg or BridgeConfig()
    if state.t >= T:
        raise ValueError("guided_step requires state.t < T")
    v = np.asarray(v, dtype=float)
    qn, pn, dg = _guided_step_batch(state.q, state.p, kv, noise, v, state.t, dt,
                                    np.asarray(dw, dtype=float), T, cfg)
    if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(pn)) and np.isfinite(dg)):
        raise NumericalError("non-finite state in guided step", t=state.t)
    return PhaseState(qn, pn, state.t + dt), float(dg)


def _endpoint_reference(state0: PhaseState, kv, noise, v, T, tau, cfg) -> float:
    """The common closed-form Gaussian reference factor for target v."""
    pred0 = dynamics.predict_endpoint(state0, kv, T, cfg.n_pred_steps)
    s2 = noise_mod.sigma_squared(noise, state0.q, state0.p)
    nd = state0.q.size
    cov = (T - tau) * s2[:nd, :nd]
    return float(gaussian_logpdf_psd(np.ravel(v), np.ravel(pred0), cov, cfg.cov_floor))


def _run_batch(state0, kv, noise, v, T, cfg, sample_indices, attempt=0):
    """Integrate a batch of guided bridges; returns times, paths, logG, final states."""
    sizes = time_grid(T, cfg)
    n, d = state0.q.shape
    m = sde.noise_dim(noise, n, d)
    normals = np.stack([
        sde.sample_increments(cfg.seed, idx, len(sizes), m, attempt=attempt)
        for idx in sample_indices
    ])
    b = len(sample_indices)
    q = np.broadcast_to(state0.q, (b, n, d)).copy()
    p = np.broadcast_to(state0.p, (b, n, d)).copy()
    qs = np.empty((len(sizes) + 1, b, n, d))
    ps = np.empty_like(qs)
    times = np.empty(len(sizes) + 1)
    qs[0], ps[0], times[0] = q, p, 0.0
    logg = np.zeros(b)
    t = 0.0
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for k, h in enumerate(sizes):
            dw = np.sqrt(h) * normals[:, k, :]
            q, p, dg = _guided_step_batch(q, p, kv, noise, v, t, h, dw, T, cfg)
            t += h
            logg += dg
            qs[k + 1], ps[k + 1], times[k + 1] = q, p, t
    return times, qs, ps, logg


def _endpoint_terms(q, p, kv, noise, v, T, tau, cfg):
    """Gaussian endpoint log-factor and gap for final states (B, N, d).

    v may be a single target (N, d) or per-sample targets (B, N, d).
    """
    b, n, d = q.shape
    pred, _ = dynamics.integrate_canonical(q, p, kv, T - tau, cfg.n_pred_steps)
    s2 = noise_mod.sigma_squared(noise, q, p)
    cov = (T - tau) * s2[:, : n * d, : n * d]
    v = np.asarray(v, dtype=float)
    if v.ndim == 3:
        flat_v = v.reshape(b, n * d)
    else:
        flat_v = np.broadcast_to(np.ravel(v), (b, n * d))
    log_end = gaussian_logpdf_psd(flat_v, pred.reshape(b, n * d), cov, cfg.cov_floor)
    gaps = np.linalg.norm(q.reshape(b, -1) - flat_v, axis=-1)
    return log_end, gaps


def sample_bridges(state0: PhaseState, kv: KernelSpec, noise: NoiseModel, v, T: float,
                   cfg: BridgeConfig, n_samples: int | None = None):
    """Sample a batch of guided bridges.

    Returns (times, qs, ps, log_weights, gaps) with qs, ps of shape
    (K+1, B, N, d).  log_weights include the endpoint factor minus the common
    reference factor.  Samples that go non-finite are re-drawn with fresh noise
    up to cfg.retries times.
    """
    v = np.asarray(v, dtype=float)
    b = cfg.n_samples if n_samples is None else n_samples
    tau = T * (1.0 - cfg.epsilon_end)
    times, qs, ps, logg = _run_batch(state0, kv, noise, v, T, cfg, range(b))
    for attempt in range(1, cfg.retries + 1):
        bad = ~(np.all(np.isfinite(qs[-1]), axis=(1, 2))
                & np.all(np.isfinite(ps[-1]), axis=(1, 2))
                & np.isfinite(logg))
        if not np.any(bad):
            break
        idx = np.flatnonzero(bad)
        _, qs_r, ps_r, logg_r = _run_batch(state0, kv, noise, v, T, cfg, idx, attempt)
        qs[:, idx], ps[:, idx], logg[idx] = qs_r, ps_r, logg_r
    else:
        bad = ~np.all(np.isfinite(qs[-1]), axis=(1, 2))
        if np.any(bad):
            raise NumericalError(
                f"{int(bad.sum())} bridge samples non-finite after {cfg.retries} retries")
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        log_end, gaps = _endpoint_terms(qs[-1], ps[-1], kv, noise, v, T, tau, cfg)
    log_ref = _endpoint_reference(state0, kv, noise, v, T, tau, cfg)
    log_weights = logg + log_end - log_ref
    if not np.all(np.isfinite(log_weights)):
        raise NumericalError("non-finite bridge log-weights")
    return times, qs, ps, log_weights, gaps


def sample_bridges_multi(state0: PhaseState, kv: KernelSpec, noise: NoiseModel,
                         targets, T: float, cfg: BridgeConfig, n_per_target: int):
    """Bridges toward several targets in one batch.

    targets: (G, N, d).  Returns (times, qs, ps, log_weights, gaps) with
    qs, ps shaped (K+1, G, B, N, d) and log_weights, gaps shaped (G, B).
    Sample (g, m) draws its noise from the key (content of target g, m), so
    results do not depend on the ordering of the targets.
    """
    targets = np.asarray(targets, dtype=float)
    g, n, d = targets.shape
    b = n_per_target
    tau = T * (1.0 - cfg.epsilon_end)
    v_full = np.repeat(targets, b, axis=0)  # (G*B, N, d)
    keys = [(content_key(targets[i]), m) for i in range(g) for m in range(b)]
    times, qs, ps, logg = _run_batch(state0, kv, noise, v_full, T, cfg, keys)
    for attempt in range(1, cfg.retries + 1):
        bad = ~(np.all(np.isfinite(qs[-1]), axis=(1, 2))
                & np.all(np.isfinite(ps[-1]), axis=(1, 2))
                & np.isfinite(logg))
        if not np.any(bad):
            break
        idx = np.flatnonzero(bad)
        _, qs_r, ps_r, logg_r = _run_batch(state0, kv, noise, v_full[idx], T, cfg,
                                           [keys[i] for i in idx], attempt)
        qs[:, idx], ps[:, idx], logg[idx] = qs_r, ps_r, logg_r
    else:
        bad = ~np.all(np.isfinite(qs[-1]), axis=(1, 2))
        if np.any(bad):
            raise NumericalError(
                f"{int(bad.sum())} bridge samples non-finite after {cfg.retries} retries")
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        log_end, gaps = _endpoint_terms(qs[-1], ps[-1], kv, noise, v_full, T, tau, cfg)
    log_refs = np.array([
        _endpoint_reference(state0, kv, noise, targets[i], T, tau, cfg) for i in range(g)
    ])
    logw = (logg + log_end).reshape(g, b) - log_refs[:, None]
    k1 = len(times)
    qs = qs.reshape(k1, g, b, n, d)
    ps = ps.reshape(k1, g, b, n, d)
    if not np.all(np.isfinite(logw)):
        raise NumericalError("non-finite bridge log-weights")
    return times, qs, ps, logw, gaps.reshape(g, b)


def sample_bridge(state0: PhaseState, kv: KernelSpec, noise: NoiseModel, v, T: float,
                  cfg: BridgeConfig, sample_index: int = 0) -> BridgeSample:
    """One guided bridge path with its log correction weight."""
    v = np.asarray(v, dtype=float)
    tau = T * (1.0 - cfg.epsilon_end)
    times, qs, ps, logg = _run_batch(state0, kv, noise, v, T, cfg,
                                     [sample_index])
    attempt = 1
    while not (np.all(np.isfinite(qs[-1])) and np.isfinite(logg[0])):
        if attempt > cfg.retries:
            raise NumericalError("bridge sample non-finite after retries")
        times, qs, ps, logg = _run_batch(state0, kv, noise, v, T, cfg,
                                         [sample_index], attempt)
        attempt += 1
    log_end, gaps = _endpoint_terms(qs[-1], ps[-1], kv, noise, v, T, tau, cfg)
    log_ref = _endpoint_reference(state0, kv, noise, v, T, tau, cfg)
    traj = Trajectory(times=times, q=qs[:, 0], p=ps[:, 0])
    return BridgeSample(path=traj,
                        log_weight=float(logg[0] + log_end[0] - log_ref),
                        endpoint_gap=float(gaps[0]))


def conditional_expectation(f, state0: PhaseState, kv: KernelSpec, noise: NoiseModel,
                            v, T: float, cfg: BridgeConfig) -> BridgeEstimate:
    """Self-normalized importance estimate of E[f(path) | q(T) = v].

    f maps a Trajectory to a float.  The unknown normalizing constant cancels
    in the ratio; an effective sample size below 2 flags weight degeneracy.
    """
    if cfg.n_samples < 2:
        raise ValueError("need n_samples >= 2")
    times, qs, ps, logw, _ = sample_bridges(state0, kv, noise, v, T, cfg)
    vals = np.array([f(Trajectory(times=times, q=qs[:, m], p=ps[:, m]))
                     for m in range(qs.shape[1])], dtype=float)
    w = np.exp(logw - logw.max())
    ess = float(w.sum()**2 / np.sum(w**2))
    value = float(np.sum(vals * w) / np.sum(w))
    return BridgeEstimate(value=value, ess=ess, n_samples=cfg.n_samples)


def log_likelihood(theta: Theta, noise_template: NoiseModel, observations,
                   kv: KernelSpec, T: float, cfg: BridgeConfig):
    """Sum over observations of the estimated log transition density at v_i.

    Each observation gets independent bridge sub-seeds.  The density estimate
    is mean(exp(log_weight)) times the closed-form Gaussian reference factor,
    evaluated stably in log space.  Returns (total, per-observation ESS array).
    """
    observations = np.asarray(observations, dtype=float)
    noise = noise_template.with_lambdas(theta.lambdas)
    state0 = PhaseState(theta.q0, theta.p0)
    tau = T * (1.0 - cfg.epsilon_end)
    total = 0.0
    esses = np.empty(len(observations))
    for i, v in enumerate(observations):
        ocfg = BridgeConfig(
            n_steps=cfg.n_steps, epsilon_end=cfg.epsilon_end, n_samples=cfg.n_samples,
            n_pred_steps=cfg.n_pred_steps, seed=derive_seed(cfg.seed, 7, content_key(v)),
            clip_drift=cfg.clip_drift, retries=cfg.retries, cov_floor=cfg.cov_floor)
        _, _, _, logw, _ = sample_bridges(state0, kv, noise, v, T, ocfg)
        log_ref = _endpoint_reference(state0, kv, noise, v, T, tau, ocfg)
        log_phat = logsumexp(logw, axis=0) - np.log(len(logw)) + log_ref
        w = np.exp(logw - logw.max())
        esses[i] = w.sum()**2 / np.sum(w**2)
        total += float(log_phat)
    return total, esses
