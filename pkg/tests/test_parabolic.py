import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from neuralpde.grid import WeightFn, make_grid
from neuralpde.optimize import ConstraintBox, initial_coefficients, random_admissible
from neuralpde.parabolic import (
    CoefficientFields, Nonlinearity, ParabolicProblem, energy_diagnostic, implicit_matrix, solve_forward,
    step_imex, terminal_loss,
)


def heat_problem(n_half=20, nt=40, T=1.0, L=3.0, theta=0.0, sigma="zero", m0=None):
    g = make_grid(1, L, n_half)
    c = CoefficientFields.constant(g, nt, beta=1.0, theta=theta)
    m0 = np.exp(-g.axis**2) if m0 is None else m0
    return ParabolicProblem(g, T, nt, c, m0, sigma=sigma)


def dirichlet_mode(g):
    # lowest eigenvector of the 3-point Laplacian with ghosts at +-(L + h)
    return np.sin(np.pi * (g.axis + g.L + g.h) / (2 * (g.L + g.h)))


@pytest.mark.parametrize("sigma", ["zero", "identity", "tanh", "smooth_relu"])
def test_zero_state_is_fixed(sigma):
    p = heat_problem(sigma=sigma)
    lev = p.coeffs.level(0)
    np.testing.assert_array_equal(step_imex(np.zeros(p.grid.shape), lev, p.dt, p.grid, sigma), 0.0)


def test_single_step_scales_first_mode():
    p = heat_problem(n_half=10, nt=5)
    g, lev = p.grid, p.coeffs.level(0)
    m = dirichlet_mode(g)
    Lop = lev.operator(g).toarray()
    mu = -(m @ Lop @ m) / (m @ m)
    assert mu == pytest.approx(4 * math.sin(math.pi * g.h / (4 * (g.L + g.h))) ** 2 / g.h**2, rel=1e-12)
    np.testing.assert_allclose(step_imex(m, lev, p.dt, g, "zero"), m / (1 + p.dt * mu), atol=1e-13)


@given(st.floats(-50, 50, allow_nan=False))
def test_step_linear_when_sigma_zero(a):
    p = heat_problem(n_half=8, nt=4)
    lev, g = p.coeffs.level(1), p.grid
    m = np.cos(g.axis)
    np.testing.assert_allclose(step_imex(a * m, lev, p.dt, g, "zero"), a * step_imex(m, lev, p.dt, g, "zero"),
                               rtol=1e-12, atol=1e-12)


def test_step_rejects_bad_dt():
    p = heat_problem()
    with pytest.raises(ValueError):
        step_imex(p.m0, p.coeffs.level(0), 0.0, p.grid, "zero")


def test_zero_initial_data_stays_zero():
    p = heat_problem(m0=np.zeros(41), sigma="tanh")
    traj = solve_forward(p)
    assert not np.any(traj.states)


def test_snapshot_zero_is_m0():
    p = heat_problem()
    traj = solve_forward(p)
    assert traj.states[0].tobytes() == p.m0.tobytes()
    np.testing.assert_allclose(traj.times, np.arange(p.nt + 1) * p.dt)
    assert np.all(np.isfinite(traj.states))


def test_pure_diffusion_matches_matrix_exponential():
    p = heat_problem(n_half=40, nt=200, T=1.0)
    g = p.grid
    m0 = dirichlet_mode(g)
    p = p.with_coeffs(p.coeffs, m0)
    ref = expm(p.T * p.coeffs.level(0).operator(g).toarray()) @ m0
    got = solve_forward(p).final
    assert np.linalg.norm(got) / np.linalg.norm(ref) == pytest.approx(1.0, abs=0.02)


def test_positive_theta_decays_faster():
    a = solve_forward(heat_problem(theta=0.0)).final
    b = solve_forward(heat_problem(theta=0.5)).final
    assert np.linalg.norm(b) < np.linalg.norm(a)


def test_pure_diffusion_plain_norm_non_increasing():
    p = heat_problem(n_half=30, nt=50, m0=None)
    norms = [np.sum(s**2) for s in solve_forward(p).states]
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_reproducible_bits():
    p = heat_problem(sigma="tanh")
    assert solve_forward(p).states.tobytes() == solve_forward(p).states.tobytes()


def test_time_refinement_order():
    losses = []
    g = make_grid(1, 3.0, 20)
    mT = np.exp(-(g.axis - 0.3) ** 2)
    for nt in (20, 40, 80, 160):
        p = heat_problem(nt=nt, sigma="tanh")
        p.coeffs.gamma[:] = 0.5
        p.coeffs.alpha[:] = 0.3
        losses.append(terminal_loss(solve_forward(p), mT, p.grid))
    d = np.abs(np.diff(losses))
    orders = np.log2(d[:-1] / d[1:])
    assert np.all(orders >= 0.9)


def test_loss_zero_at_target():
    p = heat_problem()
    traj = solve_forward(p)
    assert terminal_loss(traj, traj.final, p.grid) == 0.0


def test_loss_of_constant_offset():
    p = heat_problem(n_half=50)
    traj = solve_forward(p)
    c, g = 0.7, p.grid
    got = terminal_loss(traj, traj.final + c, g)
    # h * (2 N' + 1) points: the box [-L, L] plus half a cell at each end
    assert got == pytest.approx(c**2 * g.h * g.n_side, rel=1e-12)
    assert got == pytest.approx(c**2 * 2 * g.L, rel=g.h / g.L)


@given(st.floats(-3, 3, allow_nan=False))
def test_loss_scales_quadratically(c):
    g = make_grid(1, 1.0, 5)
    mT = np.zeros(g.shape)
    mis = np.linspace(-1, 1, g.size)
    assert terminal_loss(2 * c * mis, mT, g) == pytest.approx(4 * terminal_loss(c * mis, mT, g), rel=1e-12)


def test_loss_shape_mismatch():
    p = heat_problem()
    with pytest.raises(ValueError):
        terminal_loss(solve_forward(p), np.zeros(7), p.grid)


def test_problem_validation():
    g = make_grid(1, 1.0, 4)
    c = CoefficientFields.constant(g, 3, beta=5.0)
    box = ConstraintBox(1, 0.1, 1, 1, 1)
    with pytest.raises(ValueError):
        ParabolicProblem(g, 1.0, 3, c, np.zeros(g.shape), box=box)
    with pytest.raises(ValueError):
        ParabolicProblem(g, 1.0, 4, c, np.zeros(g.shape))
    bad = CoefficientFields.constant(g, 3, delta=1.0)
    with pytest.raises(ValueError):
        ParabolicProblem(g, 1.0, 3, bad, np.zeros(g.shape), sigma="identity")
    with pytest.raises(ValueError):
        Nonlinearity("relu")


def test_two_dimensional_solve_runs():
    g = make_grid(2, 2.0, 6)
    x1, x2 = g.mesh()
    c = CoefficientFields.constant(g, 5, alpha=[0.2, -0.1], beta=np.array([[1.0, 0.2], [0.2, 0.8]]), gamma=0.5)
    traj = solve_forward(ParabolicProblem(g, 0.5, 5, c, np.exp(-x1**2 - x2**2), sigma="tanh"))
    assert traj.states.shape == (6,) + g.shape
    assert np.linalg.norm(traj.final) < np.linalg.norm(traj.states[0])


@pytest.mark.parametrize("name", ["identity", "tanh", "smooth_relu", "zero"])
@given(z=st.floats(-3, 3, allow_nan=False))
def test_nonlinearity_derivative(name, z):
    s = Nonlinearity(name)
    assert s(0.0) == 0.0
    e = 1e-6
    fd = (s(z + e) - s(z - e)) / (2 * e)
    assert float(s.derivative(z)) == pytest.approx(float(fd), abs=1e-5)


def test_smooth_relu_is_c1_at_kinks():
    s = Nonlinearity("smooth_relu", eps=0.1)
    for k in (0.0, 0.1):
        left, right = s.derivative(k - 1e-12), s.derivative(k + 1e-12)
        assert abs(left - right) < 1e-9


def test_energy_degenerate_for_zero_data():
    p = heat_problem(m0=np.zeros(41))
    rep = energy_diagnostic(solve_forward(p), p)
    assert rep.degenerate and rep.passed


def test_energy_ratio_stable():
    box = ConstraintBox(A=1.0, b=0.5, B=1.0, C=1.0, D=0.5)
    g = make_grid(1, 3.0, 30)
    m0 = np.exp(-g.axis**2)
    rng = np.random.default_rng(0)
    base = initial_coefficients(g, 50, box)
    ratios = []
    for _ in range(5):
        c = random_admissible(base, box, rng)
        p = ParabolicProblem(g, 0.5, 50, c, m0, sigma="tanh", box=box)
        rep = energy_diagnostic(solve_forward(p), p)
        assert rep.passed and np.isfinite(rep.ratio)
        ratios.append(rep.ratio)
    assert max(ratios) / min(ratios) < 1.1


def test_implicit_matrix_is_identity_minus_dt_l():
    p = heat_problem(n_half=4, nt=2)
    lev, g = p.coeffs.level(0), p.grid
    A = implicit_matrix(lev, p.dt, g).toarray()
    np.testing.assert_allclose(A, np.eye(g.size) - p.dt * lev.operator(g).toarray())


def test_polynomial_weight_default():
    p = heat_problem()
    assert p.weight == WeightFn("polynomial", 2.0)
