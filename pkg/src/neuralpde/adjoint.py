"""Discrete adjoint of the IMEX scheme and coefficient gradients.

For ``A_k = I - dt L_k`` the forward step is
``A_k m_{k+1} = m_k + dt sigma(gamma_k m_k + delta_k)``.  With the
terminal condition ``u_nt = m_nt - mT`` the backward recursion is

    v_{k+1} = A_k^{-T} u_{k+1}
    u_k     = (1 + dt sigma'(gamma_k m_k + delta_k) gamma_k) v_{k+1}

and the loss ``J = h^d sum (m_nt - mT)^2`` has directional derivative
``dJ = sum_k dt h^d sum_x g_k . dc_k`` with the densities assembled below
(factor 2 of the squared norm included).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .parabolic import (
    CoefficientFields,
    Trajectory,
    _solve,
    cell_volume,
    implicit_matrix,
    solve_forward,
    terminal_loss,
)
from .stencil import divergence_vjp


@dataclass
class AdjointTrajectory:
    """``u[k]`` for ``k = 0..nt`` and ``v[k] = A_{k-1}^{-T} u[k]`` for ``k = 1..nt`` (``v[0]`` unused)."""

    u: np.ndarray
    v: np.ndarray


@dataclass
class GradientFields:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray

    def as_coefficients(self):
        return CoefficientFields(self.alpha, self.beta, self.gamma, self.theta)

    def __add__(self, other):
        return GradientFields(
            self.alpha + other.alpha, self.beta + other.beta,
            self.gamma + other.gamma, self.theta + other.theta,
        )

    @classmethod
    def zeros_like(cls, coeffs):
        return cls(
            np.zeros_like(coeffs.alpha), np.zeros_like(coeffs.beta),
            np.zeros_like(coeffs.gamma), np.zeros_like(coeffs.theta),
        )


def _check_pair(traj, p):
    if traj.states.shape != (p.nt + 1,) + p.grid.shape:
        raise ValueError("trajectory does not match the problem discretization")


def solve_adjoint(traj, p, mT):
    _check_pair(traj, p)
    mT = p.grid.check_field(mT, "target")
    shape, dt = p.grid.shape, p.dt
    u = np.empty_like(traj.states)
    v = np.zeros_like(traj.states)
    u[-1] = traj.final - mT
    for k in range(p.nt - 1, -1, -1):
        lev = p.coeffs.level(k)
        A = implicit_matrix(lev, dt, p.grid)
        v[k + 1] = _solve(A, u[k + 1].ravel(), trans="T").reshape(shape)
        dsig = p.sigma.derivative(lev.gamma * traj.states[k] + lev.delta)
        u[k] = (1.0 + dt * dsig * lev.gamma) * v[k + 1]
    return AdjointTrajectory(u=u, v=v)


def assemble_gradients(traj, adj, p):
    _check_pair(traj, p)
    if adj.u.shape != traj.states.shape:
        raise ValueError("adjoint and forward trajectories differ in shape")
    g = GradientFields.zeros_like(p.coeffs)
    for k in range(p.nt):
        lev = p.coeffs.level(k)
        vk, m_next, m_k = adj.v[k + 1], traj.states[k + 1], traj.states[k]
        ga, gb, gt = divergence_vjp(vk, m_next, p.grid)
        # L uses -alpha and -theta
        g.alpha[k] = -2.0 * ga
        g.beta[k] = 2.0 * gb
        g.theta[k] = -2.0 * gt
        g.gamma[k] = 2.0 * vk * p.sigma.derivative(lev.gamma * m_k + lev.delta) * m_k
    return g


def loss_and_gradient(p, mT):
    traj = solve_forward(p)
    adj = solve_adjoint(traj, p, mT)
    return terminal_loss(traj, mT, p.grid), assemble_gradients(traj, adj, p)


def directional_derivative(grad, direction, p):
    """``sum_k dt h^d sum_x g . dc`` for a direction given as fields."""
    total = sum(
        np.sum(getattr(grad, name) * getattr(direction, name))
        for name in ("alpha", "beta", "gamma", "theta")
    )
    return float(p.dt * cell_volume(p.grid) * total)


# -- per-step linearization, used to certify the transpose relation ----------


def step_linearized(dm, k, traj, p):
    """Tangent of step ``k`` with respect to ``m_k`` applied to ``dm``."""
    lev = p.coeffs.level(k)
    dsig = p.sigma.derivative(lev.gamma * traj.states[k] + lev.delta)
    rhs = (1.0 + p.dt * dsig * lev.gamma) * p.grid.check_field(dm)
    A = implicit_matrix(lev, p.dt, p.grid)
    return _solve(A, rhs.ravel()).reshape(p.grid.shape)


def step_adjoint(u, k, traj, p):
    """Transpose of :func:`step_linearized` under the Euclidean pairing."""
    lev = p.coeffs.level(k)
    A = implicit_matrix(lev, p.dt, p.grid)
    v = _solve(A, p.grid.check_field(u).ravel(), trans="T").reshape(p.grid.shape)
    dsig = p.sigma.derivative(lev.gamma * traj.states[k] + lev.delta)
    return (1.0 + p.dt * dsig * lev.gamma) * v


# -- finite-difference check --------------------------------------------------


def random_direction(coeffs, rng, fields=("alpha", "beta", "gamma", "theta")):
    """Unit-scale random perturbation; ``beta`` part symmetric."""
    d = GradientFields.zeros_like(coeffs)
    for name in fields:
        arr = rng.standard_normal(getattr(coeffs, name).shape)
        if name == "beta":
            arr = 0.5 * (arr + np.swapaxes(arr, 1, 2))
        setattr(d, name, arr)
    return d


def perturbed(coeffs, direction, eps):
    return CoefficientFields(
        coeffs.alpha + eps * direction.alpha,
        coeffs.beta + eps * direction.beta,
        coeffs.gamma + eps * direction.gamma,
        coeffs.theta + eps * direction.theta,
        coeffs.delta,
    )


def _loss_at(p, coeffs, mT):
    q = p.with_coeffs(coeffs)
    q.box = None
    return terminal_loss(solve_forward(q), mT, p.grid)


@dataclass
class GradcheckReport:
    rows: list

    @property
    def max_rel_err(self):
        return max(r[3] for r in self.rows)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "dir_deriv_adjoint", "dir_deriv_fd", "rel_err"])
            for r in self.rows:
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])


def central_difference(f, step, order=4):
    """Derivative at 0 of ``f(eps)``; ``order`` 2 uses 2 points, ``order`` 4 uses 4."""
    if order == 2:
        return (f(step) - f(-step)) / (2 * step)
    if order == 4:
        return (8 * (f(step) - f(-step)) - (f(2 * step) - f(-2 * step))) / (12 * step)
    raise ValueError("order must be 2 or 4")


def gradcheck(p, mT, n_probes=4, fd_step=1e-3, seed=0, fd_order=4):
    """Compare adjoint directional derivatives with central differences of the loss."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    if fd_order not in (2, 4):
        raise ValueError("fd_order must be 2 or 4")
    rng = np.random.default_rng(seed)
    _, grad = loss_and_gradient(p, mT)
    rows = []
    for i in range(n_probes):
        d = random_direction(p.coeffs, rng)
        adj = directional_derivative(grad, d, p)
        fd = central_difference(
            lambda e: _loss_at(p, perturbed(p.coeffs, d, e), mT), fd_step, fd_order
        )
        rel = abs(adj - fd) / max(abs(adj), abs(fd), np.finfo(float).tiny)
        rows.append((i, adj, fd, rel))
    return GradcheckReport(rows)


__all__ = [
    "AdjointTrajectory", "GradientFields", "GradcheckReport", "Trajectory",
    "assemble_gradients", "directional_derivative", "gradcheck", "loss_and_gradient",
    "solve_adjoint", "step_adjoint", "step_linearized",
]
