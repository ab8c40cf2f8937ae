"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Runtimes range from seconds to tens of minutes (criteria 6, 8, 9 are marked
slow).  Everything is seeded and deterministic.
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stochland import (bridge, datasets, dynamics, em, kernels, moments,
                       noise as nz, optimize, sde)
from stochland.bridge import BridgeConfig
from stochland.dynamics import PhaseState
from stochland.em import EmConfig
from stochland.kernels import KernelSpec
from stochland.noise import EulerianNoise, LagrangianNoise
from stochland.optimize import DeConfig
from stochland.params import Theta
from stochland.sde import SdeConfig

KV = KernelSpec("gaussian", 0.7)


def report(criterion: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {criterion}" + (f" ({detail})" if detail else ""))
    assert ok, f"{criterion}: {detail}"


def random_state(rng, n=3, d=2, p_scale=1.0):
    return PhaseState(rng.normal(size=(n, d)), rng.normal(size=(n, d)) * p_scale)


def random_eulerian(rng, j=4):
    return EulerianNoise("gaussian", centers=rng.normal(size=(j, 2)),
                         lams=rng.normal(size=(j, 2)) * 0.5,
                         scales=0.5 + np.abs(rng.normal(size=j)))


def constant_fields(lams):
    lams = np.asarray(lams, dtype=float)
    return EulerianNoise("gaussian", centers=np.zeros_like(lams), lams=lams,
                         scales=np.full(len(lams), 1e8))


# -- criterion 1: gradient correctness -------------------------------------

def test_criterion_1_gradients():
    rng = np.random.default_rng(1)
    worst = {"grad_h": 0.0, "kernel_grad": 0.0, "sigma_columns": 0.0}
    h = 1e-5
    for _ in range(100):
        st = random_state(rng)
        dq, dp = dynamics.grad_h(st.q, st.p, KV)
        fd_q = np.zeros_like(st.q)
        fd_p = np.zeros_like(st.p)
        for i in range(3):
            for a in range(2):
                qp, qm = st.q.copy(), st.q.copy()
                qp[i, a] += h
                qm[i, a] -= h
                fd_q[i, a] = (dynamics.hamiltonian(PhaseState(qp, st.p), KV)
                              - dynamics.hamiltonian(PhaseState(qm, st.p), KV)) / (2 * h)
                pp, pm = st.p.copy(), st.p.copy()
                pp[i, a] += h
                pm[i, a] -= h
                fd_p[i, a] = (dynamics.hamiltonian(PhaseState(st.q, pp), KV)
                              - dynamics.hamiltonian(PhaseState(st.q, pm), KV)) / (2 * h)
        err = max(np.abs(dq - fd_q).max() / max(np.abs(fd_q).max(), 1e-9),
                  np.abs(dp - fd_p).max() / max(np.abs(fd_p).max(), 1e-9))
        worst["grad_h"] = max(worst["grad_h"], err)
    for family in ("gaussian", "bspline3"):
        spec = KernelSpec(family, 0.8)
        for _ in range(100):
            x = rng.normal(size=2) * 1.2
            g = kernels.grad(spec, x)
            fd = np.zeros(2)
            for a in range(2):
                e = np.zeros(2)
                e[a] = h
                fd[a] = (kernels.value(spec, np.linalg.norm(x + e))
                         - kernels.value(spec, np.linalg.norm(x - e))) / (2 * h)
            err = np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-9)
            worst["kernel_grad"] = max(worst["kernel_grad"], err)
    noise = random_eulerian(rng)
    for _ in range(100):
        st = random_state(rng)
        sig = nz.build_sigma(noise, st.q, st.p).matrix

        def phi(qq, pp, l):
            return float(np.einsum("ia,ia->", pp, nz.sigma_fields(noise, qq)[..., l]))

        for l in range(noise.n_fields):
            hv = np.zeros(12)
            for i in range(3):
                for a in range(2):
                    pp, pm = st.p.copy(), st.p.copy()
                    pp[i, a] += h
                    pm[i, a] -= h
                    hv[i * 2 + a] = (phi(st.q, pp, l) - phi(st.q, pm, l)) / (2 * h)
                    qp, qm = st.q.copy(), st.q.copy()
                    qp[i, a] += h
                    qm[i, a] -= h
                    hv[6 + i * 2 + a] = -(phi(qp, st.p, l) - phi(qm, st.p, l)) / (2 * h)
            err = np.abs(sig[:, l] - hv).max() / max(np.abs(hv).max(), 1e-9)
            worst["sigma_columns"] = max(worst["sigma_columns"], err)
    ok = all(v < 1e-6 for v in worst.values())
    report("criterion 1: gradients vs central differences", ok,
           ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))


# -- criterion 2: energy conservation ---------------------------------------

def test_criterion_2_energy_conservation():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(3):
        st = random_state(rng, n=5, p_scale=0.8)
        traj = dynamics.integrate_deterministic(st, KV, 1.0, 1e-3)
        h0 = dynamics.hamiltonian(traj.state(0), KV)
        hs = [dynamics.hamiltonian(traj.state(k), KV)
              for k in range(0, len(traj), 100)]
        worst = max(worst, max(abs(hk - h0) / abs(h0) for hk in hs))
    report("criterion 2: energy conservation", worst < 1e-6, f"|dh|/|h|={worst:.2e}")


# -- criterion 3: zero-noise reduction ---------------------------------------

def test_criterion_3_zero_noise_reduction():
    rng = np.random.default_rng(3)
    st = random_state(rng, n=3, p_scale=0.7)
    noise = random_eulerian(rng).with_lambdas(np.zeros((4, 2)))
    stoch = sde.integrate_sde(st, KV, noise, SdeConfig(dt=1e-3, T=1.0, seed=1))
    det = dynamics.integrate_deterministic(st, KV, 1.0, 1e-3)
    dev = max(np.abs(stoch.q - det.q).max(), np.abs(stoch.p - det.p).max())
    report("criterion 3: zero-noise reduction", dev < 1e-6, f"max dev={dev:.2e}")


# -- criterion 4: Bismut structure -------------------------------------------

def test_criterion_4_bismut_structure():
    rng = np.random.default_rng(4)
    noise = random_eulerian(rng)
    h = 1e-5
    worst = 0.0
    for _ in range(25):
        st = random_state(rng)
        sig = nz.build_sigma(noise, st.q, st.p).matrix

        def phi(qq, pp, l):
            return float(np.einsum("ia,ia->", pp, nz.sigma_fields(noise, qq)[..., l]))

        for l in range(noise.n_fields):
            hv = np.zeros(12)
            for i in range(3):
                for a in range(2):
                    pp, pm = st.p.copy(), st.p.copy()
                    pp[i, a] += h
                    pm[i, a] -= h
                    hv[i * 2 + a] = (phi(st.q, pp, l) - phi(st.q, pm, l)) / (2 * h)
                    qp, qm = st.q.copy(), st.q.copy()
                    qp[i, a] += h
                    qm[i, a] -= h
                    hv[6 + i * 2 + a] = -(phi(qp, st.p, l) - phi(qm, st.p, l)) / (2 * h)
            worst = max(worst, np.abs(sig[:, l] - hv).max() / max(np.abs(hv).max(), 1e-9))
    report("criterion 4: Bismut structure of noise columns", worst < 1e-6,
           f"rel err={worst:.2e}")


# -- criterion 5: pure-diffusion exactness -----------------------------------

def test_criterion_5_pure_diffusion():
    lams = np.array([[0.3, 0.1], [0.0, 0.2]])
    noise = constant_fields(lams)
    state0 = PhaseState(np.array([[0.0, 0.0], [1.0, 0.0]]), np.zeros((2, 2)))
    n = 5000
    summary = sde.sample_ensemble(state0, KV, noise, SdeConfig(dt=0.01, T=1.0, seed=55), n)
    block = lams.T @ lams
    target = np.kron(np.ones((2, 2)), block)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / n)
    mc_ok = np.all(np.abs(summary.cov_qq - target) <= 3.0 * np.maximum(se, 1e-12))
    ms1 = moments.integrate_moments(
        moments.MomentState.zero_cov(state0.q, state0.p), KV, noise, 1.0, 0.01)
    ode_err = np.abs(ms1.cov_qq - target).max()
    report("criterion 5a: pure-diffusion ensemble covariance (3 SE)", bool(mc_ok))
    report("criterion 5b: pure-diffusion moment ODE", ode_err < 1e-8,
           f"max err={ode_err:.2e}")


# -- criterion 6: moment closure vs Monte Carlo ------------------------------

@pytest.mark.slow
def test_criterion_6_closure_vs_monte_carlo():
    rng = np.random.default_rng(6)
    st = PhaseState(np.array([[0.0, 0.0], [0.7, 0.2], [0.2, 0.6]]),
                    np.array([[0.4, 0.1], [-0.2, 0.3], [0.1, -0.3]]))
    noise = EulerianNoise("gaussian", centers=rng.normal(size=(3, 2)) * 0.4,
                          lams=rng.normal(size=(3, 2)) * 0.05 * KV.scale,
                          scales=np.full(3, 0.4))
    ms1 = moments.integrate_moments(moments.MomentState.zero_cov(st.q, st.p),
                                    KV, noise, 1.0, 0.01)
    summary = sde.sample_ensemble(st, KV, noise, SdeConfig(dt=0.005, T=1.0, seed=66),
                                  20000)
    rel_mean = (np.linalg.norm(ms1.mean_q - summary.mean_q)
                / np.linalg.norm(summary.mean_q))
    diag_cl = np.diag(ms1.cov_qq)
    diag_mc = np.diag(summary.cov_qq)
    rel_cov = np.abs(diag_cl - diag_mc) / diag_mc
    report("criterion 6: closure vs 20k-path Monte Carlo",
           rel_mean < 0.10 and np.all(rel_cov < 0.20),
           f"mean={rel_mean:.3f}, cov diag max={rel_cov.max():.3f}")


# -- criterion 7: bridge Gaussian oracle -------------------------------------

@pytest.mark.slow
def test_criterion_7_bridge_gaussian_oracle():
    c = 1.0
    q0 = np.array([[0.0, 0.0], [1.0, 0.0]])
    state0 = PhaseState(q0, np.zeros((2, 2)))
    noise = LagrangianNoise(KernelSpec("gaussian", 1e-4), np.full((2, 2), c))
    T = 1.0
    v = np.array([[0.5, 0.3], [1.2, -0.4]])
    cfg = BridgeConfig(n_steps=100, epsilon_end=0.02, n_samples=2000, seed=77)
    sizes = bridge.time_grid(T, cfg)
    times = np.concatenate([[0.0], np.cumsum(sizes)])
    kmid = int(np.argmin(np.abs(times - 0.5)))
    tmid = times[kmid]
    est = bridge.conditional_expectation(lambda tr: tr.q[kmid, 0, 0],
                                         state0, KV, noise, v, T, cfg)
    exact_mid = q0[0, 0] + (tmid / T) * (v[0, 0] - q0[0, 0])
    se = np.sqrt(c**2 * tmid * (T - tmid) / T / est.ess)
    mid_ok = abs(est.value - exact_mid) <= 3.0 * se
    report("criterion 7a: Brownian-bridge midpoint expectation", bool(mid_ok),
           f"est={est.value:.4f}, exact={exact_mid:.4f}, ess={est.ess:.0f}")

    rng = np.random.default_rng(7)
    obs = q0[None] + c * np.sqrt(T) * rng.normal(size=(3, 2, 2))
    theta = Theta(q0, np.zeros((2, 2)), np.full((2, 2), c))
    ll, _ = bridge.log_likelihood(theta, noise, obs, KV, T, cfg)
    nd = 4
    exact_ll = sum(-(nd / 2) * np.log(2 * np.pi * c**2 * T)
                   - np.sum((o - q0)**2) / (2 * c**2 * T) for o in obs)
    rel = abs(ll - exact_ll) / abs(exact_ll)
    report("criterion 7b: transition density vs exact Gaussian", rel < 0.05,
           f"rel err={rel:.4f}")


# -- criterion 8: scaled synthetic-ellipse replication ------------------------

@pytest.mark.slow
def test_criterion_8_ellipse_moment_fit():
    kv = KernelSpec("gaussian", 0.4)
    true_noise = datasets.synth_grid_noise(4, 4, (-0.4, 0.4, -0.4, 0.4), 0.085,
                                           {"rule": "split_xy", "major": 0.15,
                                            "minor": 0.05})
    q0 = datasets.synth_ellipse(5, center=(-0.32, -0.32), axes=(0.22, 0.22))
    p0_true = np.full((5, 2), 0.16)
    summary, ends = sde.sample_ensemble(
        PhaseState(q0, p0_true), kv, true_noise,
        SdeConfig(dt=1e-3, T=1.0, seed=2024), 5000, return_endpoints=True)
    targets = moments.targets_from_shapes(ends)

    template = true_noise.with_lambdas(np.zeros((16, 2)))
    n_p, n_l = 10, 32
    bounds = np.concatenate([np.tile([-0.5, 0.5], (n_p, 1)),
                             np.tile([0.0, 0.25], (n_l, 1))])

    def unpack(x):
        return x[:n_p].reshape(5, 2), x[n_p:].reshape(16, 2)

    def objective(x):
        p0, lams = unpack(x)
        return moments.moment_cost(p0, lams, targets, 1.0, 1.0, kv, template,
                                   q0, 1.0, 0.05)

    res = optimize.minimize(objective, DeConfig(
        population=60, generations=250, bounds=bounds, f=0.6, cr=0.9, seed=7,
        polish_steps=30))
    trace_ok = np.all(np.diff(res.trace) <= 1e-15)
    report("criterion 8a: DE cost trace non-increasing", bool(trace_ok))

    p0_est, lam_est = unpack(res.best_x)
    corr = np.corrcoef(np.abs(true_noise.lams).ravel(),
                       np.abs(lam_est).ravel())[0, 1]
    report("criterion 8b: amplitude pattern recovery", corr > 0.8,
           f"pearson corr={corr:.3f}")

    final = moments.integrate_moments(
        moments.MomentState.zero_cov(q0, p0_est), kv,
        template.with_lambdas(lam_est), 1.0, 0.01)
    fit_tr = np.array([np.trace(b) for b in final.landmark_cov_blocks()])
    tgt_tr = np.array([np.trace(b) for b in targets.cov_blocks])
    trace_err = np.abs(fit_tr - tgt_tr) / tgt_tr
    report("criterion 8c: per-landmark variance reproduction", np.all(trace_err < 0.30),
           f"max trace err={trace_err.max():.3f}")


# -- criterion 9: EM self-consistency ----------------------------------------

@pytest.mark.slow
def test_criterion_9_em_self_consistency():
    q0_true = np.array([[0.0, 0.0], [2.0, 0.0]])
    lam_true = np.array([[1.0, 0.85], [0.9, 1.15]])
    kv = KernelSpec("gaussian", 1.0)
    template = LagrangianNoise(KernelSpec("gaussian", 1e-4), np.ones((2, 2)))
    _, obs = sde.sample_ensemble(
        PhaseState(q0_true, np.zeros((2, 2))), kv, template.with_lambdas(lam_true),
        SdeConfig(dt=0.01, T=1.0, seed=100), 50, return_endpoints=True)
    init = Theta(obs.mean(axis=0), np.zeros((2, 2)), np.full((2, 2), 0.7))
    cfg = EmConfig(bridge=BridgeConfig(n_steps=60, epsilon_end=0.05, n_samples=16,
                                       seed=0),
                   lambda_bounds=(0.3, 2.5), q0_halfwidth=0.5, max_iters=12,
                   m_generations=10, m_population=12, seed=42)
    theta, trace = em.fit_em(obs, init, kv, template, 1.0, cfg)
    rel = np.abs(theta.lambdas - lam_true) / lam_true
    ascent = all(rec.q_value >= rec.q_at_prev - 1e-9 for rec in trace.iterations)
    report("criterion 9: EM recovers amplitudes within 25%", np.all(rel < 0.25),
           f"max rel err={rel.max():.3f}, iters={len(trace)}")
    report("criterion 9 (ascent): Q never decreases within an iteration", ascent)


# -- criterion 10: DE sanity ---------------------------------------------------

def test_criterion_10_de_sanity():
    res = optimize.minimize(
        lambda x: float(np.sum(x**2)),
        DeConfig(population=32, generations=200, bounds=np.tile([-5.0, 5.0], (8, 1)),
                 f=0.5, cr=0.9, seed=1))
    sphere_ok = res.best_f < 1e-6
    report("criterion 10a: sphere benchmark", sphere_ok, f"best={res.best_f:.2e}")

    def rastrigin(x):
        return float(10 * len(x) + np.sum(x**2 - 10 * np.cos(2 * np.pi * x)))

    wins = 0
    for seed in (1, 2, 3):
        r = optimize.minimize(rastrigin, DeConfig(
            population=64, generations=500, bounds=np.tile([-5.12, 5.12], (4, 1)),
            f=0.5, cr=0.9, seed=seed))
        wins += r.best_f < 1e-2
    report("criterion 10b: Rastrigin-4 majority of seeds", wins >= 2, f"wins={wins}/3")


# -- criterion 11: CLI determinism ---------------------------------------------

@pytest.mark.slow
def test_criterion_11_cli_determinism(tmp_path):
    base = {
        "schema_version": 1,
        "seed": 31,
        "kernel": {"family": "gaussian", "scale": 0.5},
        "noise": {"backend": "lagrangian", "family": "gaussian", "scale": 0.0001,
                  "lambdas": [[0.9, 0.9], [0.9, 0.9], [0.9, 0.9]]},
        "initial": {"ellipse": {"n_landmarks": 3, "axes": [0.4, 0.3]}, "p0": "zero"},
        "time": {"T": 1.0},
        "sde": {"dt": 0.02},
        "ensemble": {"n_samples": 30},
        "moments": {"dt": 0.05},
        "data": {"input": str(tmp_path / "sample_a" / "endpoints.json")},
        "fit_moments": {"estimate_p0": False, "lambda_bounds": [0.0, 2.0], "dt": 0.1,
                        "de": {"generations": 6, "population": 12, "f": 0.5}},
        "bridge": {"n_steps": 25, "epsilon_end": 0.05, "n_samples": 20, "n_dump": 1},
        "em": {"max_iters": 2, "m_generations": 4, "m_population": 12,
               "lambda_bounds": [0.2, 2.0], "init_lambda": 0.8},
        "synth": {"kind": "cc-like", "n_shapes": 3, "n_landmarks": 20},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(base))
    prepared = subprocess.run(
        [sys.executable, "-m", "stochland.cli", "sample", "--config", str(cfg_path),
         "--out", str(tmp_path / "sample_a")], capture_output=True)
    assert prepared.returncode == 0, prepared.stderr.decode()

    mismatch = []
    for command in ("simulate", "sample", "moments", "fit-moments", "bridge",
                    "likelihood", "fit-em", "synth"):
        outputs = []
        for run_id in ("r1", "r2"):
            out = tmp_path / f"{command}-{run_id}"
            proc = subprocess.run(
                [sys.executable, "-m", "stochland.cli", command,
                 "--config", str(cfg_path), "--out", str(out)], capture_output=True)
            assert proc.returncode == 0, f"{command}: {proc.stderr.decode()}"
            outputs.append(out)
        files1 = sorted(p.name for p in outputs[0].iterdir())
        files2 = sorted(p.name for p in outputs[1].iterdir())
        if files1 != files2:
            mismatch.append(f"{command}: file lists differ")
            continue
        for name in files1:
            if (outputs[0] / name).read_bytes() != (outputs[1] / name).read_bytes():
                mismatch.append(f"{command}/{name}")
    report("criterion 11: byte-identical reruns for every subcommand",
           not mismatch, "; ".join(mismatch) if mismatch else "all commands")
