"""Control basis, piecewise-constant control laws and the Galerkin propagator.

The controlled wave equation, written for ``M = (m, dm/dt)``, is

    dM/dt = (X - theta(x, t) Y) M + (0, sigma(m))

with ``X = [[0, I], [Delta - 2x.grad, 0]]`` and ``Y = [[0, 0], [I, 0]]``.
In the Hermite basis ``X`` is ``[[0, I], [-diag(rho), 0]]`` and
multiplication by a function ``f`` becomes the symmetric matrix
``M_f[m, n] = <f psi_n, psi_m>`` computed by Gauss-Hermite quadrature.

Functions of ``Phi`` (the control basis and every trigonometric polynomial
built from it) are instead represented through the functional calculus of
the truncated matrix of multiplication by ``phi``: with ``M_phi = Q diag(lam) Q^T``
the operator for ``g(Phi)`` is ``Q diag(g(lam)) Q^T``.  These operators
commute and satisfy ``cos^2 + sin^2 = I`` exactly, so the trigonometric
identities behind the saturating construction survive truncation.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.special import erf

from .._errors import NumericalFailure
from ..grid import GAUSS_HERMITE_MAX_ORDER
from ..hermite import HermiteState, analyze, synthesize
from ..parabolic import get_nonlinearity


def phi(x):
    """``2 sqrt(pi) int_0^x exp(-s^2) ds = pi erf(x)``: odd, increasing, onto (-pi, pi)."""
    return np.pi * erf(x)


@dataclass(frozen=True)
class ControlBasis:
    """``(1, cos phi(x_1), sin phi(x_1), ..., cos phi(x_d), sin phi(x_d))``."""

    dim: int = 1

    @property
    def size(self):
        return 2 * self.dim + 1

    def evaluate(self, x):
        """Values of all basis functions at points ``x`` of shape ``(M, d)``; returns ``(M, 2d+1)``."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        cols = [np.ones(len(x))]
        for k in range(self.dim):
            p = phi(x[:, k])
            cols += [np.cos(p), np.sin(p)]
        return np.stack(cols, axis=1)


@dataclass
class ControlLaw:
    """Piecewise-constant ``p: [0, duration] -> R^(2d+1)``; right-continuous at breakpoints.

    Piece durations are stored directly so that very short pulses keep
    their exact length after concatenation; breakpoints are derived.
    """

    durations: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or len(self.durations) != len(self.values):
            raise ValueError("need one value row per piece")
        if np.any(~(self.durations > 0)):
            raise ValueError("piece durations must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @classmethod
    def from_breakpoints(cls, breakpoints, values):
        breakpoints = np.asarray(breakpoints, dtype=float)
        if len(breakpoints) == 0 or breakpoints[0] != 0.0:
            raise ValueError("control law must start at t = 0")
        if np.any(np.diff(breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        return cls(np.diff(breakpoints), values)

    @classmethod
    def empty(cls, dim=1):
        return cls(np.zeros(0), np.zeros((0, 2 * dim + 1)))

    @classmethod
    def constant(cls, value, duration):
        return cls([float(duration)], np.atleast_2d(np.asarray(value, dtype=float)))

    @classmethod
    def zero(cls, duration, dim=1):
        return cls.constant(np.zeros(2 * dim + 1), duration)

    @property
    def breakpoints(self):
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    @property
    def duration(self):
        return float(np.sum(self.durations))

    @property
    def n_pieces(self):
        return len(self.values)

    def pieces(self):
        """Yield ``(duration, value)`` in time order."""
        yield from zip(self.durations, self.values)

    def piece_index(self, t):
        if self.n_pieces == 0 or not 0.0 <= t <= self.duration:
            raise ValueError(f"t = {t} outside [0, {self.duration}]")
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(k, self.n_pieces - 1)

    def value_at(self, t):
        return self.values[self.piece_index(t)]


def concatenate(p, q):
    """Run ``p`` first, then ``q``."""
    if p.n_pieces and q.n_pieces and p.values.shape[1] != q.values.shape[1]:
        raise ValueError("control laws have different dimensions")
    width = (p if p.n_pieces else q).values.shape[1]
    return ControlLaw(
        np.concatenate([p.durations, q.durations]),
        np.concatenate([p.values.reshape(-1, width), q.values.reshape(-1, width)]),
    )


def control_field(law, basis, t, x):
    """``theta(x, t) = sum_j p_j(t) theta_j(x)``."""
    return basis.evaluate(x) @ law.value_at(t)


def default_order(hbasis):
    return min(max(4 * hbasis.n_max + 4, 2 * hbasis.n_max + 2), GAUSS_HERMITE_MAX_ORDER)


def multiplication_matrix(f, hbasis, order=None):
    """Galerkin matrix of multiplication by ``f`` (callable on points or samples at the nodes)."""
    order = default_order(hbasis) if order is None else order
    if order < 2 * hbasis.n_max:
        raise ValueError(f"quadrature order {order} below 2 * n_max = {2 * hbasis.n_max}")
    nodes, weights = hbasis.quadrature(order)
    vals = f(nodes) if callable(f) else np.asarray(f, dtype=float)
    if vals.shape != (len(nodes),):
        raise ValueError(f"expected {len(nodes)} samples, got {vals.shape}")
    Psi = hbasis.evaluate(nodes)
    M = Psi.T @ ((weights * vals)[:, None] * Psi)
    return 0.5 * (M + M.T)


class WaveGalerkin:
    """Truncated wave system on a Hermite basis with quadrature-built control matrices."""

    def __init__(self, hbasis, order=None):
        self.hbasis = hbasis
        self.cbasis = ControlBasis(hbasis.dim)
        self.order = default_order(hbasis) if order is None else order
        self.nodes, self.weights = hbasis.quadrature(self.order)
        self.Psi = hbasis.evaluate(self.nodes)

    @cached_property
    def phi_spectrum(self):
        """``(lam, Q)``: points in ``Phi``-space (shape ``(N, d)``) and orthogonal eigenvectors."""
        from ..hermite import HermiteBasis

        axis = HermiteBasis(1, self.hbasis.n_max)
        lam1, Q1 = np.linalg.eigh(multiplication_matrix(lambda x: phi(x[:, 0]), axis, self.order))
        idx = self.hbasis.indices
        Q = np.ones((self.hbasis.size, self.hbasis.size))
        for k in range(self.hbasis.dim):
            Q *= Q1[idx[:, k]][:, idx[:, k]]
        return lam1[idx], Q

    def phi_function_matrix(self, g):
        """Operator for ``g(Phi(x))``; ``g`` maps ``Phi``-values of shape ``(N, d)`` to ``(N,)``."""
        lam, Q = self.phi_spectrum
        M = (Q * np.asarray(g(lam), dtype=float)) @ Q.T
        return 0.5 * (M + M.T)

    @cached_property
    def control_matrices(self):
        d = self.hbasis.dim
        mats = [np.eye(self.hbasis.size)]
        for k in range(d):
            mats.append(self.phi_function_matrix(lambda P, k=k: np.cos(P[:, k])))
            mats.append(self.phi_function_matrix(lambda P, k=k: np.sin(P[:, k])))
        return np.stack(mats)

    @cached_property
    def X(self):
        n = self.hbasis.size
        X = np.zeros((2 * n, 2 * n))
        X[:n, n:] = np.eye(n)
        X[n:, :n] = -np.diag(self.hbasis.rho)
        return X

    def Y(self, M):
        """Block ``[[0, 0], [M, 0]]``."""
        n = self.hbasis.size
        out = np.zeros((2 * n, 2 * n))
        out[n:, :n] = M
        return out

    def theta_matrix(self, p):
        return np.tensordot(np.asarray(p, dtype=float), self.control_matrices, axes=1)

    def multiplication(self, f):
        return multiplication_matrix(f, self.hbasis, self.order)

    def piece_exponential(self, duration, p):
        """``expm(duration * (X - theta(p) Y))`` with ``duration * p`` formed first."""
        return expm(duration * self.X - self.Y(self.theta_matrix(duration * np.asarray(p))))

    def at_nodes(self, coeffs):
        return self.Psi @ coeffs

    def from_nodes(self, vals):
        return self.Psi.T @ (self.weights * vals)

    def analyze(self, f):
        return analyze(f, self.hbasis, self.order)

    def synthesize(self, coeffs, points):
        return synthesize(coeffs, self.hbasis, points)


_GALERKIN_CACHE = {}


def galerkin_for(hbasis, order=None):
    key = (hbasis, order)
    if key not in _GALERKIN_CACHE:
        _GALERKIN_CACHE[key] = WaveGalerkin(hbasis, order)
    return _GALERKIN_CACHE[key]


def _linear_piece(G, vec, duration, p):
    return G.piece_exponential(duration, p) @ vec


def _nonlinear_piece(G, vec, duration, p, sigma, k, rtol, atol):
    n = G.hbasis.size
    A = G.X - G.Y(G.theta_matrix(p))

    def rhs(_t, y):
        out = A @ y
        out[n:] += G.from_nodes(sigma(G.at_nodes(y[:n])))
        return out

    sol = solve_ivp(rhs, (0.0, duration), vec, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success or not np.all(np.isfinite(sol.y[:, -1])):
        raise NumericalFailure(f"integration failed on piece {k}: {sol.message}", piece=k)
    return sol.y[:, -1]


def propagate(s0, law, sigma=None, galerkin=None, rtol=1e-10, atol=1e-12, record=False):
    """Mild solution under ``law``; linear pieces by matrix exponential, nonlinear by DOP853.

    With ``record=True`` returns ``(final_state, times, states)`` with one
    entry per breakpoint.
    """
    G = galerkin or galerkin_for(s0.basis)
    sig = None if sigma is None else get_nonlinearity(sigma)
    if sig is not None and sig.is_zero:
        sig = None
    vec = s0.vector
    times, states = [0.0], [s0]
    for k, (duration, p) in enumerate(law.pieces()):
        if sig is None:
            vec = _linear_piece(G, vec, duration, p)
            if not np.all(np.isfinite(vec)):
                raise NumericalFailure(f"non-finite state after piece {k}", piece=k)
        else:
            vec = _nonlinear_piece(G, vec, duration, p, sig, k, rtol, atol)
        if record:
            times.append(times[-1] + duration)
            states.append(HermiteState.from_vector(s0.basis, vec))
    final = HermiteState.from_vector(s0.basis, vec)
    return (final, np.array(times), states) if record else final


def lipschitz_estimate(law, hbasis, n_pairs=8, seed=0, galerkin=None):
    """Largest observed ``||S(M0) - S(M1)|| / ||M0 - M1||`` over random pairs (linear flow)."""
    from ..hermite import state_distance

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        s0 = HermiteState(hbasis, rng.standard_normal(hbasis.size), rng.standard_normal(hbasis.size))
        s1 = HermiteState(hbasis, rng.standard_normal(hbasis.size), rng.standard_normal(hbasis.size))
        num = state_distance(propagate(s0, law, galerkin=galerkin), propagate(s1, law, galerkin=galerkin))
        worst = max(worst, num / state_distance(s0, s1))
    return worst
