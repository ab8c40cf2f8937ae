import numpy as np
import pytest

from stochland import dynamics
from stochland.dynamics import PhaseState, Trajectory
from stochland.errors import NumericalError
from stochland.kernels import KernelSpec

from conftest import random_state

KV = KernelSpec("gaussian", 0.7)


def test_hamiltonian_single_landmark():
    st = PhaseState(q=np.zeros((1, 2)), p=np.array([[1.0, 0.0]]))
    assert dynamics.hamiltonian(st, KernelSpec("gaussian", 1.0)) == pytest.approx(0.5)


def test_hamiltonian_coincident_pair():
    st = PhaseState(q=np.zeros((2, 2)), p=np.array([[1.0, 0.0], [1.0, 0.0]]))
    # hand expansion: 1/2 (1 + 1 + 1 + 1) with k(0) = 1
    assert dynamics.hamiltonian(st, KernelSpec("gaussian", 1.0)) == pytest.approx(2.0)


def test_hamiltonian_distant_pair():
    st = PhaseState(q=np.array([[0.0, 0.0], [100.0, 0.0]]),
                    p=np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert dynamics.hamiltonian(st, KernelSpec("gaussian", 1.0)) == pytest.approx(1.0, abs=1e-12)


def test_grad_h_single_landmark():
    st = PhaseState(q=np.zeros((1, 2)), p=np.array([[0.4, -0.3]]))
    dq, dp = dynamics.grad_h(st.q, st.p, KV)
    assert np.allclose(dq, 0.0)
    assert dp == pytest.approx(st.p)


def test_grad_h_vs_finite_differences(rng):
    h = 1e-6
    for _ in range(100):
        st = random_state(rng)
        dq, dp = dynamics.grad_h(st.q, st.p, KV)
        fd_q = np.zeros_like(st.q)
        fd_p = np.zeros_like(st.p)
        for i in range(st.n_landmarks):
            for a in range(st.dim):
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
        assert np.linalg.norm(dq - fd_q) / max(np.linalg.norm(fd_q), 1e-9) < 1e-6
        assert np.linalg.norm(dp - fd_p) / max(np.linalg.norm(fd_p), 1e-9) < 1e-6


def test_swap_antisymmetry():
    q = np.array([[1.0, 0.0], [-1.0, 0.0]])
    p = np.array([[-0.5, 0.0], [0.5, 0.0]])
    dq, _ = dynamics.grad_h(q, p, KV)
    assert np.allclose(dq[0], -dq[1])


def test_single_landmark_straight_line():
    st = PhaseState(q=np.zeros((1, 2)), p=np.array([[1.0, 0.0]]))
    traj = dynamics.integrate_deterministic(st, KernelSpec("gaussian", 1.0), 1.0, 0.01)
    assert np.allclose(traj.endpoint.q, [[1.0, 0.0]], atol=1e-10)
    assert np.allclose(traj.endpoint.p, [[1.0, 0.0]], atol=1e-10)


def test_identity_flow_limit(rng):
    st = random_state(rng)
    traj = dynamics.integrate_deterministic(st, KV, 1e-6, 1e-6)
    assert np.allclose(traj.endpoint.q, st.q, atol=1e-5)
    assert np.allclose(traj.endpoint.p, st.p, atol=1e-5)


def test_head_on_symmetry():
    q = np.array([[1.0, 0.02], [-1.0, -0.02]])
    p = np.array([[-0.6, 0.0], [0.6, 0.0]])
    traj = dynamics.integrate_deterministic(PhaseState(q, p), KV, 1.0, 1e-3)
    # swapping the two landmarks maps the trajectory onto its negation
    assert np.allclose(traj.q[:, 0], -traj.q[:, 1], atol=1e-10)
    assert np.allclose(traj.p[:, 0], -traj.p[:, 1], atol=1e-10)


def test_energy_conservation(rng):
    for _ in range(3):
        st = random_state(rng, n=5, p_scale=0.8)
        traj = dynamics.integrate_deterministic(st, KV, 1.0, 1e-3)
        h0 = dynamics.hamiltonian(traj.state(0), KV)
        for k in (len(traj) // 2, len(traj) - 1):
            hk = dynamics.hamiltonian(traj.state(k), KV)
            assert abs(hk - h0) / abs(h0) < 1e-6


def test_time_reversibility(rng):
    st = random_state(rng, n=4, p_scale=0.7)
    fwd = dynamics.integrate_deterministic(st, KV, 1.0, 1e-3)
    back = dynamics.integrate_deterministic(
        PhaseState(fwd.endpoint.q, -fwd.endpoint.p), KV, 1.0, 1e-3)
    assert np.linalg.norm(back.endpoint.q - st.q) < 1e-6


def test_predict_endpoint_at_horizon(rng):
    st = random_state(rng)
    st.t = 1.0
    assert np.array_equal(dynamics.predict_endpoint(st, KV, 1.0), st.q)


def test_predict_endpoint_straight_line():
    st = PhaseState(q=np.array([[0.2, -0.1]]), p=np.array([[1.0, 0.0]]))
    pred = dynamics.predict_endpoint(st, KernelSpec("gaussian", 1.0), 1.0)
    assert np.allclose(pred, [[1.2, -0.1]], atol=1e-9)


def test_predict_endpoint_consistency(rng):
    st = random_state(rng, n=3, p_scale=0.8)
    pred = dynamics.predict_endpoint(st, KV, 1.0, n_pred_steps=10)
    fine = dynamics.integrate_deterministic(st, KV, 1.0, 1e-4)
    # coarse predictor error is O(dt_pred^4)
    assert np.linalg.norm(pred - fine.endpoint.q) < 10 * (0.1) ** 4


def test_nonfinite_rejected():
    st = PhaseState(q=np.zeros((1, 2)), p=np.array([[1e160, 0.0]]))
    with pytest.raises(NumericalError):
        dynamics.integrate_deterministic(st, KernelSpec("gaussian", 1.0), 1.0, 0.1)


def test_step_sizes_land_exactly():
    for T, dt in [(1.0, 1e-3), (1.0, 0.3), (0.7, 0.2)]:
        sizes = dynamics.step_sizes(T, dt)
        assert sizes.sum() == pytest.approx(T, rel=1e-12)
        assert len(sizes) == max(int(round(T / dt)), 1)


def test_trajectory_rows_roundtrip(rng):
    st = random_state(rng)
    traj = dynamics.integrate_deterministic(st, KV, 0.1, 0.05)
    rows = dynamics.trajectory_to_rows(traj)
    assert len(rows) == len(traj) * st.n_landmarks
    assert rows[0][0] == 0.0 and rows[0][1] == 0
