import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from episwitch import (
    DomainError,
    UnsupportedModelError,
    g_exact_1d,
    hilbert_distance,
    lambda_exact_1d,
    load_model,
    perron,
    reference_model,
    stationary_env,
)
from oracles import expm, g_two_env, lambda_two_env, quadratic_root, random_metzler


@pytest.mark.parametrize(
    "A, value, vector",
    [
        ([[2.0]], 2.0, [1.0]),
        ([[-1.0, 1.0], [1.0, -1.0]], 0.0, [0.5, 0.5]),
        ([[-1.0, 2.0], [2.0, -1.0]], 1.0, [0.5, 0.5]),
    ],
)
def test_perron_examples(A, value, vector):
    pair = perron(A)
    assert pair.value == pytest.approx(value, abs=1e-12)
    np.testing.assert_allclose(pair.vector, vector, atol=1e-12)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_perron_matches_dense_eigensolver(d, seed):
    gen = np.random.default_rng(seed)
    A = random_metzler(gen, d, density=0.6) - np.diag(gen.random(d) * 3)
    pair = perron(A)
    assert pair.residual < 1e-12
    assert np.abs(A @ pair.vector - pair.value * pair.vector).sum() < 1e-12
    assert np.all(pair.vector > 0) and pair.vector.sum() == pytest.approx(1.0)
    assert pair.value == pytest.approx(np.linalg.eigvals(A).real.max(), abs=1e-9)


@pytest.mark.parametrize("A", [[[0.0, -1.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 2.0]], [[1.0, 2.0, 3.0]]])
def test_perron_rejects(A):
    with pytest.raises(DomainError):
        perron(A)


@pytest.mark.parametrize(
    "Q, pi",
    [
        ([[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.5]),
        ([[-2.0, 2.0], [1.0, -1.0]], [1 / 3, 2 / 3]),
        ([[0.0]], [1.0]),
    ],
)
def test_stationary_env_examples(Q, pi):
    np.testing.assert_allclose(stationary_env(Q), pi, atol=1e-14)


def test_stationary_env_rejects():
    with pytest.raises(DomainError):
        stationary_env([[-1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(DomainError):
        stationary_env([[-1.0, 2.0], [1.0, -1.0]])


# -- one-dimensional exact exponents ----------------------------------------------


def test_g_exact_at_zero():
    for name in ("B", "S", "N", "const1"):
        assert g_exact_1d(reference_model(name), 0.0) == pytest.approx(0.0, abs=1e-12)


def test_g_exact_model_b_values():
    spec = reference_model("B")
    assert g_exact_1d(spec, -1.5) == pytest.approx(0.0, abs=1e-12)
    assert g_exact_1d(spec, 1.0) == pytest.approx(quadratic_root(0.5, -2.5), abs=1e-12)
    assert g_exact_1d(spec, 1.0) == pytest.approx(1.35078, abs=1e-5)


@given(st.floats(-4, 4))
def test_g_exact_matches_closed_form(p):
    for name, (a1, a2) in {"B": (2.0, -0.5), "S": (2.0, 1.0), "N": (-0.6, 0.2)}.items():
        assert g_exact_1d(reference_model(name), p) == pytest.approx(g_two_env(a1, a2, 1, 1, p), abs=1e-10)


def test_lambda_exact():
    assert lambda_exact_1d(reference_model("B")) == pytest.approx(lambda_two_env(2.0, -0.5, 1, 1))
    assert lambda_exact_1d(reference_model("B")) == pytest.approx(0.75)
    assert lambda_exact_1d(reference_model("N")) == pytest.approx(-0.2)


def test_derivative_at_zero_is_lambda():
    spec = reference_model("B")
    h = 1e-5
    slope = (g_exact_1d(spec, h) - g_exact_1d(spec, -h)) / (2 * h)
    assert slope == pytest.approx(0.75, abs=1e-8)


def test_g_exact_is_convex():
    g = np.array([g_exact_1d(reference_model("B"), p) for p in np.linspace(-3, 3, 61)])
    assert np.all(np.diff(g, 2) >= -1e-9)


def test_g_exact_unsupported():
    with pytest.raises(UnsupportedModelError):
        g_exact_1d(reference_model("const2"), 1.0)
    with pytest.raises(UnsupportedModelError):
        g_exact_1d(load_model("configs/two_group.json"), 1.0)


# -- Hilbert metric -----------------------------------------------------------------


@pytest.mark.parametrize(
    "x, y, expected",
    [
        ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.0),
        ([2.0, 1.0], [1.0, 1.0], math.log(2)),
        ([1.0, 4.0], [2.0, 2.0], math.log(4)),
    ],
)
def test_hilbert_examples(x, y, expected):
    assert hilbert_distance(x, y) == pytest.approx(expected, abs=1e-15)


def test_hilbert_rejects_nonpositive():
    with pytest.raises(DomainError):
        hilbert_distance([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        hilbert_distance([1.0, 1.0], [1.0, 1.0, 1.0])


@given(
    st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3),
    st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=3),
    st.floats(1e-6, 1e6),
)
def test_hilbert_projective_invariance(x, y, c):
    x, y = np.array(x), np.array(y)
    assert math.isclose(hilbert_distance(c * x, y), hilbert_distance(x, y), rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(hilbert_distance(x, c * y), hilbert_distance(x, y), rel_tol=1e-12, abs_tol=1e-12)


def test_birkhoff_contraction():
    gen = np.random.default_rng(2024)
    for _ in range(100):
        T = gen.random((3, 3)) + 0.01
        x, y = gen.random(3) + 0.01, gen.random(3) + 0.01
        before = hilbert_distance(x, y)
        after = hilbert_distance(T @ x, T @ y)
        assert after < before


@pytest.mark.parametrize("t", [0.1, 1.0])
def test_angular_flow_contracts(t):
    gen = np.random.default_rng(int(10 * t))
    for _ in range(50):
        A = random_metzler(gen, 3, density=0.5) - np.diag(gen.random(3) * 2)
        P = expm(t * A)
        th1, th2 = gen.dirichlet(np.ones(3)), gen.dirichlet(np.ones(3))
        phi1, phi2 = P @ th1, P @ th2
        phi1, phi2 = phi1 / phi1.sum(), phi2 / phi2.sum()
        assert hilbert_distance(phi1, phi2) <= hilbert_distance(th1, th2) + 1e-12
