import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.hermite import hermval

from neuralpde.hermite import (
    HermiteBasis, HermiteState, analyze, eigen_residual, eigenvalue, free_evolution, hermite_eval,
    hermite_functions, orthonormality_error, state_distance, state_norm, synthesize, wave_energy,
    write_coefficients,
)

times = st.floats(-20, 20, allow_nan=False)


def random_state(hb, seed):
    rng = np.random.default_rng(seed)
    decay = np.exp(-0.3 * hb.indices.sum(axis=1))
    return HermiteState(hb, rng.standard_normal(hb.size) * decay, rng.standard_normal(hb.size) * decay)


def test_low_degree_values():
    x = np.linspace(-2, 2, 7)
    np.testing.assert_array_equal(hermite_eval(0, x), 1.0)
    np.testing.assert_array_equal(hermite_eval(1, x), 2 * x)
    assert hermite_eval(2, 1.0) == 2.0
    assert hermite_eval(3, 2.0) == 8 * 8 - 12 * 2


@given(st.integers(0, 10), st.floats(-3, 3, allow_nan=False))
def test_parity(n, x):
    assert hermite_eval(n, -x) == pytest.approx((-1) ** n * hermite_eval(n, x), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n", [0, 1, 5, 12])
def test_recurrence_matches_numpy(n):
    x = np.linspace(-3, 3, 11)
    coef = np.zeros(n + 1)
    coef[n] = 1
    np.testing.assert_allclose(hermite_eval(n, x), hermval(x, coef), rtol=1e-12)


def test_normalized_functions():
    x = np.linspace(-2, 2, 9)
    psi = hermite_functions(6, x)
    for n in range(7):
        c = math.sqrt(2**n * math.factorial(n) * math.sqrt(math.pi))
        np.testing.assert_allclose(psi[n], hermite_eval(n, x) / c, rtol=1e-12, atol=1e-14)


def test_eigenvalues():
    assert eigenvalue((0, 0)) == 0
    assert eigenvalue((1, 0)) == 2
    assert eigenvalue((2, 3)) == 10
    with pytest.raises(ValueError):
        eigenvalue((-1,))


@pytest.mark.parametrize("dim", [1, 2])
def test_orthonormal_and_eigen(dim):
    hb = HermiteBasis(dim, 16)
    assert orthonormality_error(hb) <= 1e-12
    assert eigen_residual(hb) <= 1e-10


def test_basis_indexing():
    hb = HermiteBasis(2, 3)
    assert hb.size == 16
    assert hb.position((1, 2)) == 6
    np.testing.assert_array_equal(hb.indices[6], [1, 2])
    assert hb.rho[6] == 6
    with pytest.raises(ValueError):
        hb.position((4, 0))


def test_one_is_scaled_psi0():
    hb = HermiteBasis(2, 4)
    x = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_allclose(synthesize(hb.one, hb, x), 1.0, rtol=1e-14)


def test_analyze_unit_vector():
    hb = HermiteBasis(1, 16)
    nodes, _ = hb.quadrature()
    samples = hermite_functions(16, nodes[:, 0])[2]
    np.testing.assert_allclose(analyze(samples, hb), hb.unit(2), atol=1e-12)


def test_cubic_round_trip():
    hb = HermiteBasis(1, 5)
    poly = lambda x: 1 - 2 * x[:, 0] + 0.5 * x[:, 0] ** 3  # noqa: E731
    c = analyze(poly, hb)
    pts = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(synthesize(c, hb, pts), poly(pts[:, None]), rtol=1e-12, atol=1e-12)


def test_orthogonal_to_higher_mode():
    hb = HermiteBasis(1, 8)
    c = analyze(lambda x: hermite_functions(9, x[:, 0])[9], hb, order=12)
    np.testing.assert_allclose(c, 0.0, atol=1e-12)


def test_insufficient_order():
    hb = HermiteBasis(1, 8)
    with pytest.raises(ValueError):
        analyze(lambda x: x[:, 0], hb, order=5)


@given(st.integers(0, 2**32 - 1))
def test_analyze_synthesize_identity(seed):
    hb = HermiteBasis(2, 5)
    c = np.random.default_rng(seed).standard_normal(hb.size)
    nodes, _ = hb.quadrature()
    np.testing.assert_allclose(analyze(synthesize(c, hb, nodes), hb), c, atol=1e-10)


def test_stationary_state():
    hb = HermiteBasis(1, 6)
    s0 = HermiteState(hb, hb.unit(0), np.zeros(hb.size))
    for t in (0.3, 5.0, 100.0):
        st_ = free_evolution(s0, t)
        assert state_distance(st_, s0) == 0.0


def test_linear_growth_of_mean():
    hb = HermiteBasis(1, 6)
    s0 = HermiteState(hb, np.zeros(hb.size), hb.unit(0))
    for t in (0.5, 2.0):
        st_ = free_evolution(s0, t)
        assert st_.a[0] == t
        np.testing.assert_array_equal(st_.bdot, s0.bdot)


@pytest.mark.parametrize("n", [1, 2, 7])
def test_full_period(n):
    hb = HermiteBasis(1, 8)
    s0 = HermiteState(hb, hb.unit(n), np.zeros(hb.size))
    back = free_evolution(s0, 2 * math.pi / math.sqrt(2 * n))
    assert state_distance(back, s0) < 1e-13


@given(st.integers(0, 2**32 - 1), times, times)
def test_group_property(seed, t, s):
    hb = HermiteBasis(2, 4)
    s0 = random_state(hb, seed)
    lhs = free_evolution(free_evolution(s0, t), s)
    rhs = free_evolution(s0, t + s)
    assert state_distance(lhs, rhs) <= 1e-12 * max(1.0, state_norm(rhs))


def test_energy_values():
    hb = HermiteBasis(1, 5)
    assert wave_energy(HermiteState.zeros(hb)) == 0.0
    for n in range(6):
        assert wave_energy(HermiteState(hb, hb.unit(n), np.zeros(hb.size))) == 2 * n


@given(st.integers(0, 2**32 - 1), st.floats(0, 10))
def test_energy_conserved(seed, t):
    hb = HermiteBasis(1, 16)
    s0 = random_state(hb, seed)
    e0 = wave_energy(s0)
    assert abs(wave_energy(free_evolution(s0, t)) - e0) <= 1e-12 * e0


def test_state_validation():
    hb = HermiteBasis(1, 3)
    with pytest.raises(ValueError):
        HermiteState(hb, np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        HermiteState(hb, np.full(4, np.nan), np.zeros(4))


def test_state_norm_weights_rho():
    hb = HermiteBasis(1, 3)
    s = HermiteState(hb, hb.unit(2), hb.unit(1))
    assert state_norm(s) == pytest.approx(math.sqrt(5 + 1))


def test_coefficient_csv(tmp_path):
    hb = HermiteBasis(2, 1)
    s = HermiteState(hb, np.arange(4.0), -np.arange(4.0))
    write_coefficients(s, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "index1,index2,a,bdot"
    assert lines[2] == "0,1,1.0,-1.0"
