import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochland import kernels
from stochland.kernels import KernelSpec


def fd_gradient(spec, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for a in range(len(x)):
        e = np.zeros_like(x)
        e[a] = h
        out[a] = (kernels.value(spec, np.linalg.norm(x + e))
                  - kernels.value(spec, np.linalg.norm(x - e))) / (2 * h)
    return out


def test_gaussian_values():
    spec = KernelSpec("gaussian", 1.0)
    assert kernels.value(spec, 0.0) == 1.0
    assert kernels.value(spec, 1.0) == pytest.approx(np.exp(-0.5), rel=1e-12)


def test_bspline_values():
    spec = KernelSpec("bspline3", 1.0)
    assert kernels.value(spec, 0.0) == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert kernels.value(spec, 2.0) == 0.0
    assert kernels.value(spec, 2.5) == 0.0


def test_bspline_compact_support():
    spec = KernelSpec("bspline3", 0.7)
    xs = np.linspace(1.4, 5.0, 50)
    assert np.all(kernels.value(spec, xs) == 0.0)


@given(x=st.floats(-4, 4), scale=st.floats(0.2, 3.0),
       family=st.sampled_from(["gaussian", "bspline3"]))
def test_evenness(x, scale, family):
    spec = KernelSpec(family, scale)
    assert kernels.value(spec, x) == pytest.approx(kernels.value(spec, -x), abs=1e-15)


@given(family=st.sampled_from(["gaussian", "bspline3"]))
@settings(max_examples=10)
def test_range(family):
    spec = KernelSpec(family, 1.3)
    xs = np.linspace(-6, 6, 301)
    vals = kernels.value(spec, xs)
    upper = 1.0 if family == "gaussian" else 2.0 / 3.0
    assert np.all(vals >= 0.0) and np.all(vals <= upper + 1e-15)


def test_gradient_closed_form():
    spec = KernelSpec("gaussian", 1.0)
    g = kernels.grad(spec, np.array([1.0, 0.0]))
    assert g == pytest.approx([-np.exp(-0.5), 0.0], rel=1e-12)
    assert np.all(kernels.grad(spec, np.zeros(2)) == 0.0)


def test_gradient_vs_finite_differences(rng):
    for family in ("gaussian", "bspline3"):
        spec = KernelSpec(family, 0.8)
        worst = 0.0
        for _ in range(100):
            x = rng.normal(size=2) * 1.2
            g = kernels.grad(spec, x)
            fd = fd_gradient(spec, x)
            denom = max(np.linalg.norm(fd), 1e-9)
            worst = max(worst, np.linalg.norm(g - fd) / denom)
        assert worst < 1e-6


def test_hessian_vs_finite_differences(rng):
    for family in ("gaussian", "bspline3"):
        spec = KernelSpec(family, 0.9)
        for _ in range(30):
            x = rng.normal(size=2)
            h = 1e-5
            fd = np.zeros((2, 2))
            for a in range(2):
                e = np.zeros(2)
                e[a] = h
                fd[:, a] = (kernels.grad(spec, x + e) - kernels.grad(spec, x - e)) / (2 * h)
            assert np.allclose(kernels.hessian(spec, x), fd, rtol=1e-4, atol=1e-6)


def test_kv_matrix_basics():
    spec = KernelSpec("gaussian", 1.0)
    assert np.allclose(kernels.kv_matrix(spec, np.zeros((1, 2))), [[1.0]])
    assert np.allclose(kernels.kv_matrix(spec, np.zeros((2, 2))), np.ones((2, 2)))


def test_kv_matrix_symmetric_psd(rng):
    spec = KernelSpec("gaussian", 0.7)
    for _ in range(10):
        q = rng.normal(size=(6, 2))
        k = kernels.kv_matrix(spec, q)
        assert np.array_equal(k, k.T)
        assert np.linalg.eigvalsh(k).min() >= -1e-10


def test_invalid_spec():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", -1.0)
    with pytest.raises(ValueError):
        KernelSpec("cubic", 1.0)


def test_spec_json_roundtrip():
    spec = KernelSpec("bspline3", 0.085)
    assert KernelSpec.from_json(spec.to_json()) == spec
