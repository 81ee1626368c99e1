"""Uniform grids on [-L, L]^d, weight functions and quadrature rules.

Grid fields are numpy arrays of shape ``grid.shape``; in two dimensions the
array is indexed ``[i1, i2]`` with ``x1 = axis[i1]`` and ``x2 = axis[i2]``.
The row-major "image" ordering used to flatten a 2D field into a network
input vector is available through :meth:`Grid.flat_point` and
:func:`to_image_vector`.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from ._errors import UnsupportedError

GAUSS_HERMITE_MAX_ORDER = 150


@dataclass(frozen=True)
class Grid:
    """Tensor grid with ``2 * n_half + 1`` points per side and spacing ``L / n_half``."""

    dim: int
    L: float
    n_half: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.L > 0:
            raise ValueError(f"half extent L must be positive, got {self.L}")
        if int(self.n_half) != self.n_half or self.n_half < 1:
            raise ValueError(f"n_half must be a positive integer, got {self.n_half}")

    @property
    def n_side(self):
        return 2 * self.n_half + 1

    @property
    def h(self):
        return self.L / self.n_half

    @property
    def shape(self):
        return (self.n_side,) * self.dim

    @property
    def size(self):
        return self.n_side**self.dim

    @property
    def axis(self):
        return np.arange(-self.n_half, self.n_half + 1) * self.h

    def mesh(self):
        """Coordinate arrays, one per dimension, each of shape ``self.shape``."""
        return np.meshgrid(*([self.axis] * self.dim), indexing="ij")

    @property
    def points(self):
        """All grid points as an array of shape ``(*self.shape, dim)``."""
        return np.stack(self.mesh(), axis=-1)

    def flat_point(self, i):
        """Coordinates of entry ``i`` (1-based) of the flattened image vector.

        In 1D entry ``i`` is ``z = (i - 1) h - L``.  In 2D the vector runs
        row by row from the top edge ``x2 = L`` down, left to right within
        a row: ``x1 = ((i-1) mod N) h - L``, ``x2 = L - floor((i-1)/N) h``.
        """
        if not 1 <= i <= self.size:
            raise ValueError(f"index {i} outside 1..{self.size}")
        n = self.n_side
        if self.dim == 1:
            return ((i - 1) * self.h - self.L,)
        r = (i - 1) % n
        q = (i - 1) // n
        return (r * self.h - self.L, self.L - q * self.h)

    def check_field(self, f, name="field"):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise ValueError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        return f


def make_grid(dim, L, n_half):
    if not float(n_half).is_integer():
        raise ValueError(f"n_half must be an integer, got {n_half}")
    return Grid(dim=int(dim), L=float(L), n_half=int(n_half))


def to_image_vector(field, grid):
    """Flatten a grid field into the 1-based image ordering of :meth:`Grid.flat_point`."""
    field = grid.check_field(field)
    if grid.dim == 1:
        return field.copy()
    return field[:, ::-1].T.ravel()


def from_image_vector(vec, grid):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (grid.size,):
        raise ValueError(f"vector has shape {vec.shape}, expected ({grid.size},)")
    if grid.dim == 1:
        return vec.copy()
    n = grid.n_side
    return vec.reshape(n, n).T[:, ::-1].copy()


@dataclass(frozen=True)
class WeightFn:
    """Weight ``(1 + |x|^2)^lam`` (``kind='polynomial'``) or ``exp(-|x|^2)`` (``kind='gaussian'``)."""

    kind: str = "polynomial"
    lam: float = 2.0

    def __post_init__(self):
        if self.kind not in ("polynomial", "gaussian"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "polynomial" and not self.lam > 1:
            raise ValueError(f"polynomial weight needs lam > 1, got {self.lam}")

    def __call__(self, points):
        r2 = np.sum(np.asarray(points, dtype=float) ** 2, axis=-1)
        if self.kind == "gaussian":
            return np.exp(-r2)
        return (1.0 + r2) ** self.lam


def trapezoid_weights(grid):
    """Tensor trapezoid weights over [-L, L]^d, shape ``grid.shape``."""
    w1 = np.full(grid.n_side, grid.h)
    w1[[0, -1]] = grid.h / 2
    w = w1
    for _ in range(grid.dim - 1):
        w = np.multiply.outer(w, w1)
    return w


def weighted_inner(f, g, w, grid):
    """Trapezoid approximation of the integral of ``f g w`` over [-L, L]^d."""
    f = grid.check_field(f, "f")
    g = grid.check_field(g, "g")
    return float(np.sum(f * g * w(grid.points) * trapezoid_weights(grid)))


def gradient(f, grid):
    """Centered differences inside, first-order one-sided at the boundary."""
    f = grid.check_field(f)
    parts = np.gradient(f, grid.h, edge_order=1)
    if grid.dim == 1:
        parts = [parts]
    return list(parts)


def weighted_norms(f, w, grid):
    """Return ``(||f||_{L2_w}, ||f||_{H1_w})``."""
    l2sq = weighted_inner(f, f, w, grid)
    h1sq = l2sq + sum(weighted_inner(df, df, w, grid) for df in gradient(f, grid))
    return float(np.sqrt(max(l2sq, 0.0))), float(np.sqrt(max(h1sq, 0.0)))


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def order(self):
        return len(self.nodes)

    def integrate(self, values):
        """Sum of ``weights * values`` (the integrand already excludes ``exp(-x^2)``)."""
        return float(np.dot(self.weights, values))


def gauss_hermite(order):
    """Gauss-Hermite rule for the weight ``exp(-x^2)`` on the real line."""
    if int(order) != order or order < 1:
        raise ValueError(f"order must be a positive integer, got {order}")
    if order > GAUSS_HERMITE_MAX_ORDER:
        raise UnsupportedError(
            f"Gauss-Hermite order {order} exceeds cap {GAUSS_HERMITE_MAX_ORDER}"
        )
    nodes, weights = hermgauss(int(order))
    return QuadratureRule(nodes=nodes, weights=weights)


def tensor_gauss_hermite(order, dim):
    """Tensor product rule on R^dim; nodes shape ``(order**dim, dim)``."""
    rule = gauss_hermite(order)
    if dim == 1:
        return rule.nodes[:, None], rule.weights.copy()
    grids = np.meshgrid(*([rule.nodes] * dim), indexing="ij")
    wgrids = np.meshgrid(*([rule.weights] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=-1), axis=-1)
    return nodes, weights
