"""Hermite eigenbasis of the Ornstein-Uhlenbeck operator ``Delta - 2 x . grad``.

``psi_n`` is the tensor product of normalized physicists' Hermite
polynomials, orthonormal under the weight ``exp(-|x|^2)``, with
``-(Delta - 2 x . grad) psi_n = 2 |n| psi_n``.  The constant function 1
equals ``pi^(d/4) psi_0``.
"""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .grid import tensor_gauss_hermite


def hermite_eval(n, x):
    """Physicists' Hermite polynomial ``H_n`` by ``H_{n+1} = 2x H_n - 2n H_{n-1}``."""
    if int(n) != n or n < 0:
        raise ValueError(f"degree must be a non-negative integer, got {n}")
    x = np.asarray(x, dtype=float)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for k in range(int(n)):
        prev, cur = cur, 2 * x * cur - 2 * k * prev
    return cur


def hermite_functions(n_max, x):
    """Normalized ``psi_0..psi_{n_max}`` at ``x``; shape ``(n_max + 1, *x.shape)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1,) + x.shape)
    out[0] = np.pi**-0.25
    if n_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = np.sqrt(2.0 / (n + 1)) * x * out[n] - np.sqrt(n / (n + 1)) * out[n - 1]
    return out


def _shifted(vals, n_max, k):
    """``psi_{n-k}`` rows aligned with ``n`` (zero where ``n < k``)."""
    out = np.zeros_like(vals)
    out[k:] = vals[: n_max + 1 - k]
    return out


def hermite_derivatives(n_max, x):
    """``(psi, psi', psi'')`` using ``psi_n' = sqrt(2n) psi_{n-1}``."""
    vals = hermite_functions(n_max, x)
    n = np.arange(n_max + 1).reshape((-1,) + (1,) * np.ndim(x))
    d1 = np.sqrt(2 * n) * _shifted(vals, n_max, 1)
    d2 = np.sqrt(2 * n * np.maximum(2 * (n - 1), 0)) * _shifted(vals, n_max, 2)
    return vals, d1, d2


def eigenvalue(n):
    """``rho_n = 2 |n|``."""
    n = np.atleast_1d(np.asarray(n))
    if np.any(n < 0):
        raise ValueError("multi-index entries must be non-negative")
    return int(2 * np.sum(n))


@dataclass(frozen=True)
class HermiteBasis:
    """Multi-indices ``n`` with ``0 <= n_i <= n_max`` in lexicographic order."""

    dim: int = 1
    n_max: int = 16

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError("n_max must be a non-negative integer")

    @property
    def indices(self):
        return np.array(list(itertools.product(range(self.n_max + 1), repeat=self.dim)))

    @property
    def size(self):
        return (self.n_max + 1) ** self.dim

    @property
    def rho(self):
        return 2.0 * self.indices.sum(axis=1)

    def position(self, n):
        n = tuple(np.atleast_1d(n))
        if len(n) != self.dim or any(not 0 <= k <= self.n_max for k in n):
            raise ValueError(f"multi-index {n} not in basis")
        pos = 0
        for k in n:
            pos = pos * (self.n_max + 1) + int(k)
        return pos

    def unit(self, n):
        e = np.zeros(self.size)
        e[self.position(n)] = 1.0
        return e

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"points must have shape (M, {self.dim})")
        return x

    def evaluate(self, x):
        """``Psi[j, p] = psi_{n_p}(x_j)`` for points ``x`` of shape ``(M, d)``."""
        x = self._points(x)
        idx = self.indices
        out = np.ones((len(x), self.size))
        for k in range(self.dim):
            out *= hermite_functions(self.n_max, x[:, k])[idx[:, k]].T
        return out

    def ou_apply(self, x):
        """``-(Delta - 2 x . grad) psi_n`` at ``x``, from exact derivative recurrences."""
        x = self._points(x)
        idx = self.indices
        per_axis = [hermite_derivatives(self.n_max, x[:, k]) for k in range(self.dim)]
        out = np.zeros((len(x), self.size))
        for k in range(self.dim):
            term = -(per_axis[k][2][idx[:, k]] - 2 * x[:, k] * per_axis[k][1][idx[:, k]])
            for j in range(self.dim):
                if j != k:
                    term = term * per_axis[j][0][idx[:, j]]
            out += term.T
        return out

    def quadrature(self, order=None):
        order = self.n_max + 1 if order is None else order
        if order < self.n_max + 1:
            raise ValueError(f"quadrature order {order} below n_max + 1 = {self.n_max + 1}")
        return tensor_gauss_hermite(order, self.dim)

    @property
    def one(self):
        """Coefficient vector of the constant function 1."""
        return np.pi ** (self.dim / 4) * self.unit((0,) * self.dim)


def analyze(f, basis, order=None):
    """Coefficients ``<f, psi_n>`` by Gauss-Hermite quadrature.

    ``f`` is a callable on points ``(M, d)`` or its samples at the nodes of
    ``basis.quadrature(order)``.
    """
    nodes, weights = basis.quadrature(order)
    vals = f(nodes) if callable(f) else np.asarray(f, dtype=float)
    if vals.shape != (len(nodes),):
        raise ValueError(f"expected {len(nodes)} samples, got shape {vals.shape}")
    return basis.evaluate(nodes).T @ (weights * vals)


def synthesize(coeffs, basis, points):
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients")
    return basis.evaluate(points) @ coeffs


def orthonormality_error(basis, order=None):
    nodes, weights = basis.quadrature(order)
    Psi = basis.evaluate(nodes)
    gram = Psi.T @ (weights[:, None] * Psi)
    return float(np.max(np.abs(gram - np.eye(basis.size))))


def eigen_residual(basis, order=None):
    """Max over ``n`` of ``||-(Delta - 2x.grad) psi_n - 2|n| psi_n||_{L2_w}``."""
    nodes, weights = basis.quadrature(order or basis.n_max + 2)
    r = basis.ou_apply(nodes) - basis.evaluate(nodes) * basis.rho
    return float(np.sqrt(np.max(weights @ r**2)))


@dataclass
class HermiteState:
    """Spectral coefficients of ``(m, dm/dt)``."""

    basis: HermiteBasis
    a: np.ndarray
    bdot: np.ndarray

    def __post_init__(self):
        self.a = np.array(self.a, dtype=float)
        self.bdot = np.array(self.bdot, dtype=float)
        for name in ("a", "bdot"):
            v = getattr(self, name)
            if v.shape != (self.basis.size,):
                raise ValueError(f"{name} has shape {v.shape}, basis has {self.basis.size} modes")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")

    @classmethod
    def zeros(cls, basis):
        return cls(basis, np.zeros(basis.size), np.zeros(basis.size))

    @property
    def vector(self):
        return np.concatenate([self.a, self.bdot])

    @classmethod
    def from_vector(cls, basis, vec):
        return cls(basis, vec[: basis.size], vec[basis.size:])

    def __sub__(self, other):
        return HermiteState(self.basis, self.a - other.a, self.bdot - other.bdot)


def state_norm(s):
    """``H1_w x L2_w`` norm: ``sum (1 + rho_n) a_n^2 + sum bdot_n^2``, square-rooted."""
    return float(np.sqrt(np.sum((1 + s.basis.rho) * s.a**2) + np.sum(s.bdot**2)))


def state_distance(s, t):
    return state_norm(s - t)


def free_evolution(s0, t):
    """Exact free flow: each nonzero mode rotates at frequency ``sqrt(rho_n)``; mode 0 drifts."""
    w = np.sqrt(s0.basis.rho)
    zero = w == 0
    c, s = np.cos(w * t), np.sin(w * t)
    ws = np.where(zero, 1.0, w)
    a = np.where(zero, s0.a + s0.bdot * t, s0.a * c + s0.bdot * s / ws)
    b = np.where(zero, s0.bdot, -w * s0.a * s + s0.bdot * c)
    return HermiteState(s0.basis, a, b)


def wave_energy(s):
    return float(np.sum(s.basis.rho * s.a**2) + np.sum(s.bdot**2))


def write_coefficients(s, path):
    """CSV with one row per mode: ``index1[,index2],a,bdot``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"index{k + 1}" for k in range(s.basis.dim)] + ["a", "bdot"])
        for n, a, b in zip(s.basis.indices, s.a, s.bdot):
            w.writerow([int(k) for k in n] + [repr(float(a)), repr(float(b))])
