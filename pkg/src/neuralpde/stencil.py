"""Finite-difference operators built from coefficient fields.

Two forms of the second-order operator are provided:

* :func:`assemble_kdelta` is the non-divergence "layer matrix"
  ``theta y + alpha . grad y + sum_kl beta_kl d_k d_l y`` with the 3-point
  (1D) or 9-point (2D) stencil and zero ghost values outside the grid.
* :func:`assemble_divergence` is ``theta y + alpha . grad y +
  sum_kl d_k (beta_kl d_l y)``, with diagonal fluxes evaluated at cell faces
  (arithmetic mean of the neighbouring values) and cross fluxes by nested
  centered differences.  For constant ``beta`` both forms coincide.

Fields are flattened in C order for the sparse matrices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import make_grid


@dataclass
class CoefficientSlice:
    """Coefficients at one time level.

    ``alpha`` has shape ``(d, *grid.shape)``, ``beta`` ``(d, d, *grid.shape)``
    and ``theta`` ``grid.shape``.
    """

    alpha: np.ndarray
    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        d = self.alpha.shape[0]
        if self.beta.shape[:2] != (d, d):
            raise ValueError(f"beta leading shape {self.beta.shape[:2]} != ({d}, {d})")
        if self.beta.shape[2:] != self.theta.shape or self.alpha.shape[1:] != self.theta.shape:
            raise ValueError("alpha, beta and theta live on different grids")
        if not np.array_equal(self.beta, np.swapaxes(self.beta, 0, 1)):
            raise ValueError("beta must be symmetric at every point")
        for name in ("alpha", "beta", "theta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def dim(self):
        return self.alpha.shape[0]

    @classmethod
    def constant(cls, grid, alpha=0.0, beta=1.0, theta=0.0):
        """Spatially constant coefficients; scalars broadcast, ``beta`` scalar means ``beta * I``."""
        d = grid.dim
        a = np.broadcast_to(np.asarray(alpha, dtype=float), (d,))
        b = np.asarray(beta, dtype=float)
        b = b * np.eye(d) if b.ndim == 0 else b
        ones = np.ones(grid.shape)
        return cls(
            alpha=a.reshape((d,) + (1,) * d) * ones,
            beta=b.reshape((d, d) + (1,) * d) * ones,
            theta=float(theta) * ones,
        )


# -- 1D building blocks (n points, zero ghosts at both ends) ------------------


def _centered_1d(n, h):
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n)) / (2 * h)


def _face_gradient_1d(n, h):
    """Map point values to the n + 1 face differences ``(y_f - y_{f-1}) / h``."""
    return sp.diags([np.ones(n), -np.ones(n)], [0, -1], shape=(n + 1, n)) / h


def _face_average_1d(n):
    """Face values of a point field: neighbour mean inside, edge value replicated outside."""
    P = sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, -1], shape=(n + 1, n)).tolil()
    P[0, 0] = 1.0
    P[n, n - 1] = 1.0
    return P.tocsr()


def _along(op, axis, dim, n):
    """Lift a 1D operator to act along ``axis`` of a C-ordered ``dim``-D field."""
    if dim == 1:
        return sp.csr_matrix(op)
    eye = sp.identity(n, format="csr")
    return sp.kron(op, eye, format="csr") if axis == 0 else sp.kron(eye, op, format="csr")


class _Blocks:
    """Sparse difference matrices for one grid."""

    def __init__(self, grid):
        n, h, d = grid.n_side, grid.h, grid.dim
        self.grid = grid
        self.C = [_along(_centered_1d(n, h), k, d, n) for k in range(d)]
        self.G = [_along(_face_gradient_1d(n, h), k, d, n) for k in range(d)]
        self.P = [_along(_face_average_1d(n), k, d, n) for k in range(d)]
        self.S = [-(G.T @ G).tocsr() for G in self.G]


_BLOCK_CACHE = {}


def _blocks(grid):
    key = (grid.dim, grid.L, grid.n_half)
    if key not in _BLOCK_CACHE:
        _BLOCK_CACHE[key] = _Blocks(grid)
    return _BLOCK_CACHE[key]


def _check(c, grid, dim=None):
    if dim is not None and grid.dim != dim:
        raise ValueError(f"operator requires a {dim}D grid, got {grid.dim}D")
    if c.dim != grid.dim or c.theta.shape != grid.shape:
        raise ValueError(
            f"coefficients of shape {c.theta.shape} (d={c.dim}) do not match grid {grid.shape}"
        )


def _diag(field):
    return sp.diags(np.ravel(field))


def _nondivergence(c, grid):
    B = _blocks(grid)
    K = _diag(c.theta)
    for k in range(grid.dim):
        K = K + _diag(c.alpha[k]) @ B.C[k] + _diag(c.beta[k, k]) @ B.S[k]
    if grid.dim == 2:
        # 2 beta_12 d1 d2 y with the 4-corner stencil / (4 h^2)
        K = K + 2 * _diag(c.beta[0, 1]) @ (B.C[0] @ B.C[1])
    return K.tocsr()


def assemble_kdelta_1d(c, grid):
    _check(c, grid, dim=1)
    return _nondivergence(c, grid)


def assemble_kdelta_2d(c, grid):
    _check(c, grid, dim=2)
    return _nondivergence(c, grid)


def assemble_kdelta(c, grid):
    return assemble_kdelta_1d(c, grid) if grid.dim == 1 else assemble_kdelta_2d(c, grid)


def _shift(y, axis, step):
    """``y`` shifted so that entry i holds y[i + step] along ``axis``, zeros beyond the edge."""
    out = np.zeros_like(y)
    n = y.shape[axis]
    src = [slice(None)] * y.ndim
    dst = [slice(None)] * y.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, n), slice(0, n - step)
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = y[tuple(src)]
    return out


def apply_kdelta(c, y, grid):
    """Matrix-free application of :func:`assemble_kdelta`."""
    _check(c, grid)
    y = grid.check_field(y, "y")
    h = grid.h
    out = c.theta * y
    for k in range(grid.dim):
        yp, ym = _shift(y, k, 1), _shift(y, k, -1)
        out = out + c.alpha[k] * (yp - ym) / (2 * h)
        out = out + c.beta[k, k] * (yp - 2 * y + ym) / h**2
    if grid.dim == 2:
        pp = _shift(_shift(y, 0, 1), 1, 1)
        pm = _shift(_shift(y, 0, 1), 1, -1)
        mp = _shift(_shift(y, 0, -1), 1, 1)
        mm = _shift(_shift(y, 0, -1), 1, -1)
        out = out + 2 * c.beta[0, 1] * (pp - pm - mp + mm) / (4 * h**2)
    return out


def assemble_divergence(c, grid):
    """Sparse ``theta y + alpha . grad y + sum_kl d_k(beta_kl d_l y)``."""
    _check(c, grid)
    B = _blocks(grid)
    A = _diag(c.theta)
    for k in range(grid.dim):
        A = A + _diag(c.alpha[k]) @ B.C[k]
        face_beta = B.P[k] @ np.ravel(c.beta[k, k])
        A = A - B.G[k].T @ sp.diags(face_beta) @ B.G[k]
    if grid.dim == 2:
        b12 = _diag(0.5 * (c.beta[0, 1] + c.beta[1, 0]))
        A = A + B.C[0] @ b12 @ B.C[1] + B.C[1] @ b12 @ B.C[0]
    return A.tocsr()


def divergence_vjp(u, y, grid):
    """Partial derivatives of ``<u, D(c) y>`` (plain dot product) w.r.t. the coefficients.

    The operator is linear in the coefficients, so the result does not
    depend on ``c``.  Returns ``(g_alpha, g_beta, g_theta)`` shaped like the
    fields of :class:`CoefficientSlice`; ``g_beta`` is symmetric.
    """
    B = _blocks(grid)
    d = grid.dim
    u = np.ravel(u)
    y = np.ravel(y)
    g_theta = (u * y).reshape(grid.shape)
    g_alpha = np.stack([(u * (B.C[k] @ y)).reshape(grid.shape) for k in range(d)])
    g_beta = np.zeros((d, d) + grid.shape)
    for k in range(d):
        flux = (B.G[k] @ u) * (B.G[k] @ y)
        g_beta[k, k] = -(B.P[k].T @ flux).reshape(grid.shape)
    if d == 2:
        cross = (B.C[0].T @ u) * (B.C[1] @ y) + (B.C[1].T @ u) * (B.C[0] @ y)
        g_beta[0, 1] = g_beta[1, 0] = 0.5 * cross.reshape(grid.shape)
    return g_alpha, g_beta, g_theta


@dataclass
class ConsistencyResult:
    order: float
    errors: np.ndarray
    hs: np.ndarray

    @property
    def exact(self):
        return np.isinf(self.order)


def interior(field, dim):
    return field[(slice(1, -1),) * dim]


def consistency_order(builder, reference, resolutions, *, dim=1, L=1.0, exact_tol=1e-12):
    """Least-squares slope of log(max interior error) against log(h).

    ``builder(grid)`` returns a sparse matrix or a callable ``y -> K y`` on
    grid fields; ``reference(grid)`` returns ``(y, exact_Ky)``.  Each
    resolution (``n_half``) must double the previous one.  If every error is
    below ``exact_tol`` the order is reported as ``inf`` ("exact").
    """
    resolutions = list(resolutions)
    if len(resolutions) < 3:
        raise ValueError("consistency_order needs at least 3 resolutions")
    for a, b in zip(resolutions, resolutions[1:]):
        if b != 2 * a:
            raise ValueError(f"resolutions must double: {resolutions}")
    errors, hs = [], []
    for n_half in resolutions:
        grid = make_grid(dim, L, n_half)
        op = builder(grid)
        y, exact = reference(grid)
        Ky = op(y) if callable(op) else (op @ np.ravel(y)).reshape(grid.shape)
        errors.append(np.max(np.abs(interior(Ky - exact, dim))))
        hs.append(grid.h)
    errors, hs = np.array(errors), np.array(hs)
    if np.all(errors <= exact_tol):
        return ConsistencyResult(order=np.inf, errors=errors, hs=hs)
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    return ConsistencyResult(order=float(slope), errors=errors, hs=hs)
