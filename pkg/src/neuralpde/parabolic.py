"""Controlled semilinear parabolic equation on a truncated grid.

The state obeys

    dm/dt - sum_kl d_k(beta_kl d_l m) + alpha . grad m + theta m = sigma(gamma m + delta)

with homogeneous Dirichlet data just outside the grid.  Time stepping is
first-order IMEX: the linear part is implicit, the nonlinearity explicit,
and the coefficients are constant over each step (one coefficient level per
step, like one residual layer per step).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._errors import NumericalFailure
from .grid import WeightFn, weighted_inner, weighted_norms
from .stencil import CoefficientSlice, assemble_divergence

SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise map with its derivative."""

    name: str
    eps: float = 0.1

    def __post_init__(self):
        if self.name not in ("identity", "tanh", "smooth_relu", "zero"):
            raise ValueError(f"unknown nonlinearity {self.name!r}")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "identity":
            return z.copy()
        if self.name == "tanh":
            return np.tanh(z)
        if self.name == "zero":
            return np.zeros_like(z)
        # C^1 ramp: quadratic on [0, eps], linear beyond
        e = self.eps
        return np.where(z <= 0, 0.0, np.where(z < e, z * z / (2 * e), z - e / 2))

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.name == "identity":
            return np.ones_like(z)
        if self.name == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if self.name == "zero":
            return np.zeros_like(z)
        e = self.eps
        return np.clip(z / e, 0.0, 1.0)

    @property
    def is_zero(self):
        return self.name == "zero"


def get_nonlinearity(sigma):
    if isinstance(sigma, Nonlinearity):
        return sigma
    return Nonlinearity(sigma)


@dataclass
class LevelCoefficients:
    """All coefficients acting during one time step."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray

    def operator(self, grid):
        """Sparse ``L`` with ``dm/dt = L m + sigma(...)``: diffusion - advection - reaction."""
        c = CoefficientSlice(alpha=-self.alpha, beta=self.beta, theta=-self.theta)
        return assemble_divergence(c, grid)


_FIELDS = ("alpha", "beta", "gamma", "theta")


@dataclass
class CoefficientFields:
    """Time-indexed coefficient fields, one level per time step.

    Shapes: ``alpha (nt, d, *s)``, ``beta (nt, d, d, *s)``, and
    ``gamma``, ``theta``, ``delta`` ``(nt, *s)`` where ``s`` is the grid shape.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray = None

    def __post_init__(self):
        for name in _FIELDS:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        if self.delta is None:
            self.delta = np.zeros_like(self.gamma)
        self.delta = np.array(self.delta, dtype=float)
        nt, d = self.alpha.shape[:2]
        s = self.gamma.shape[1:]
        expected = {
            "alpha": (nt, d) + s,
            "beta": (nt, d, d) + s,
            "gamma": (nt,) + s,
            "theta": (nt,) + s,
            "delta": (nt,) + s,
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def nt(self):
        return self.alpha.shape[0]

    @property
    def dim(self):
        return self.alpha.shape[1]

    def level(self, k):
        return LevelCoefficients(
            self.alpha[k], self.beta[k], self.gamma[k], self.theta[k], self.delta[k]
        )

    def copy(self):
        return CoefficientFields(
            self.alpha.copy(), self.beta.copy(), self.gamma.copy(), self.theta.copy(),
            self.delta.copy(),
        )

    @classmethod
    def constant(cls, grid, nt, alpha=0.0, beta=1.0, gamma=0.0, theta=0.0, delta=0.0):
        d, s = grid.dim, grid.shape
        a = np.broadcast_to(np.asarray(alpha, dtype=float), (d,))
        b = np.asarray(beta, dtype=float)
        b = b * np.eye(d) if b.ndim == 0 else b
        ones = np.ones((nt,) + s)
        return cls(
            alpha=np.broadcast_to(a.reshape((1, d) + (1,) * d), (nt, d) + s).copy(),
            beta=np.broadcast_to(b.reshape((1, d, d) + (1,) * d), (nt, d, d) + s).copy(),
            gamma=gamma * ones,
            theta=theta * ones,
            delta=delta * ones,
        )

    def trainable(self):
        return {name: getattr(self, name) for name in _FIELDS}


@dataclass
class Trajectory:
    """Snapshots ``states[k] = m(., t_k)`` for ``k = 0..nt``."""

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray = field(default=None)

    @property
    def final(self):
        return self.states[-1]


@dataclass
class ParabolicProblem:
    grid: object
    T: float
    nt: int
    coeffs: CoefficientFields
    m0: np.ndarray
    sigma: Nonlinearity = field(default_factory=lambda: Nonlinearity("zero"))
    weight: WeightFn = field(default_factory=WeightFn)
    box: object = None

    def __post_init__(self):
        if not self.T > 0 or int(self.nt) < 1:
            raise ValueError("need T > 0 and nt >= 1")
        self.nt = int(self.nt)
        self.sigma = get_nonlinearity(self.sigma)
        self.m0 = self.grid.check_field(self.m0, "m0")
        if self.coeffs.nt != self.nt or self.coeffs.gamma.shape[1:] != self.grid.shape:
            raise ValueError("coefficient fields do not match the grid/time discretization")
        if self.box is not None and not self.box.contains(self.coeffs):
            raise ValueError("coefficients violate the constraint box")
        if np.any(self.sigma(self.coeffs.delta) != 0):
            raise ValueError("sigma(delta) must vanish")

    @property
    def dt(self):
        return self.T / self.nt

    def with_coeffs(self, coeffs, m0=None):
        return ParabolicProblem(
            self.grid, self.T, self.nt, coeffs, self.m0 if m0 is None else m0,
            self.sigma, self.weight, self.box,
        )


def implicit_matrix(level, dt, grid):
    n = grid.size
    return (sp.identity(n, format="csc") - dt * level.operator(grid)).tocsc()


def _solve(A, rhs, trans="N"):
    lu = splu(A)
    x = lu.solve(rhs, trans=trans)
    M = A.T if trans == "T" else A
    res = np.linalg.norm(M @ x - rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if res > SOLVE_RTOL * scale and res > 1e-300:
        raise NumericalFailure(f"linear solve residual {res / scale:.3e} above tolerance", residual=res / scale)
    return x


def step_imex(m, level, dt, grid, sigma):
    """One step of ``(I - dt L) m_next = m + dt sigma(gamma m + delta)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    sigma = get_nonlinearity(sigma)
    m = grid.check_field(m, "m")
    rhs = m + dt * sigma(level.gamma * m + level.delta)
    A = implicit_matrix(level, dt, grid)
    return _solve(A, rhs.ravel()).reshape(grid.shape)


def solve_forward(p):
    grid, dt = p.grid, p.dt
    states = np.empty((p.nt + 1,) + grid.shape)
    states[0] = p.m0
    for k in range(p.nt):
        states[k + 1] = step_imex(states[k], p.coeffs.level(k), dt, grid, p.sigma)
    if not np.all(np.isfinite(states)):
        raise NumericalFailure("non-finite state in forward solve")
    energy = np.array([weighted_inner(s, s, p.weight, grid) for s in states])
    return Trajectory(times=np.arange(p.nt + 1) * dt, states=states, energy=energy)


def cell_volume(grid):
    return grid.h**grid.dim


def terminal_loss(traj, mT, grid):
    """Squared L2 distance of the final state from ``mT``.

    The integral is the trapezoid rule on the box extended by one cell on
    each side, where the Dirichlet ghost values vanish; this reduces to
    ``h^d * sum((m - mT)^2)``.
    """
    final = traj.final if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    final = grid.check_field(final, "final state")
    mT = grid.check_field(mT, "target")
    return float(cell_volume(grid) * np.sum((final - mT) ** 2))


@dataclass
class EnergyReport:
    ratio: float
    sup_h1: float
    dissipation: float
    m0_h1: float
    bound: float
    degenerate: bool

    @property
    def passed(self):
        return self.degenerate or self.ratio <= self.bound


def energy_diagnostic(traj, p, bound=10.0):
    """Ratio ``(sup_t ||m||_H1w^2 + sum_k dt ||dm/dt||_L2w^2) / ||m0||_H1w^2``."""
    grid, w = p.grid, p.weight
    sup_h1 = max(weighted_norms(s, w, grid)[1] ** 2 for s in traj.states)
    rates = np.diff(traj.states, axis=0) / p.dt
    dissipation = sum(p.dt * weighted_inner(r, r, w, grid) for r in rates)
    m0_h1 = weighted_norms(traj.states[0], w, grid)[1] ** 2
    if m0_h1 == 0.0:
        return EnergyReport(0.0, sup_h1, dissipation, 0.0, bound, degenerate=True)
    return EnergyReport((sup_h1 + dissipation) / m0_h1, sup_h1, dissipation, m0_h1, bound, False)
