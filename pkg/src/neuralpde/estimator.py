"""scikit-learn style wrappers.

:class:`NeuralPDERegressor` learns shared coefficient fields mapping initial
states to terminal states: rows of ``X`` and ``y`` are grid fields
flattened in C order.  :class:`HermiteTransformer` maps samples at the
Gauss-Hermite nodes to Hermite coefficients and back.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .grid import make_grid
from .hermite import HermiteBasis, analyze
from .optimize import FIELDS, ConstraintBox, TrainConfig, initial_coefficients, train
from .parabolic import ParabolicProblem, solve_forward


class NeuralPDERegressor(RegressorMixin, BaseEstimator):
    """Fit the coefficients of ``dm/dt = div(beta grad m) + alpha.grad m + theta m + sigma(gamma m + delta)``.

    Parameters mirror the grid, the time discretization, the constraint box
    and :class:`~neuralpde.optimize.TrainConfig`.
    """

    def __init__(self, dim=1, L=3.0, n_half=30, T=1.0, nt=40, sigma="zero",
                 A=2.0, b=0.01, B=1.0, C=1.0, D=1.0, free=FIELDS, spatially_constant=False,
                 smoothness=0.0, max_iters=200, step_init=1.0, tol=1e-12, random_state=0):
        self.dim = dim
        self.L = L
        self.n_half = n_half
        self.T = T
        self.nt = nt
        self.sigma = sigma
        self.A = A
        self.b = b
        self.B = B
        self.C = C
        self.D = D
        self.free = free
        self.spatially_constant = spatially_constant
        self.smoothness = smoothness
        self.max_iters = max_iters
        self.step_init = step_init
        self.tol = tol
        self.random_state = random_state

    def _grid(self):
        return make_grid(self.dim, self.L, self.n_half)

    def _fields(self, X, grid):
        X = check_array(X, dtype=float)
        if X.shape[1] != grid.size:
            raise ValueError(f"expected {grid.size} features (grid points), got {X.shape[1]}")
        return X.reshape((-1,) + grid.shape)

    def _problem(self, grid, coeffs, m0):
        return ParabolicProblem(grid, self.T, self.nt, coeffs, m0, sigma=self.sigma)

    def fit(self, X, y, coef_init=None):
        """Train on pairs ``(X[i], y[i])`` of initial and terminal fields."""
        X, y = check_X_y(X, y, dtype=float, multi_output=True, y_numeric=True)
        grid = self._grid()
        m0s, mTs = self._fields(X, grid), self._fields(y, grid)
        box = ConstraintBox(self.A, self.b, self.B, self.C, self.D)
        coeffs = initial_coefficients(grid, self.nt, box) if coef_init is None else coef_init
        cfg = TrainConfig(max_iters=self.max_iters, step_init=self.step_init, tol=self.tol,
                          seed=self.random_state, free=tuple(self.free),
                          spatially_constant=self.spatially_constant, smoothness=self.smoothness)
        p = self._problem(grid, coeffs, m0s[0])
        result = train(p, list(zip(m0s, mTs)), box, cfg)
        self.coef_ = result.coeffs
        self.history_ = result.history
        self.status_ = result.status
        self.n_iter_ = result.n_iter
        self.grid_ = grid
        self.box_ = box
        self.n_features_in_ = grid.size
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        m0s = self._fields(X, self.grid_)
        out = [solve_forward(self._problem(self.grid_, self.coef_, m0)).final.ravel() for m0 in m0s]
        return np.array(out)

    def loss(self, X, y):
        """Sum of squared terminal mismatches in the discrete ``L2`` norm."""
        diff = self.predict(X) - check_array(y, dtype=float)
        return float(np.sum(diff**2) * self.grid_.h ** self.dim)


class HermiteTransformer(TransformerMixin, BaseEstimator):
    """Samples at the nodes of ``HermiteBasis(dim, n_max).quadrature(order)`` to coefficients."""

    def __init__(self, dim=1, n_max=16, order=None):
        self.dim = dim
        self.n_max = n_max
        self.order = order

    def fit(self, X=None, y=None):
        self.basis_ = HermiteBasis(self.dim, self.n_max)
        self.nodes_, self.weights_ = self.basis_.quadrature(self.order)
        if X is not None:
            X = check_array(X, dtype=float)
            if X.shape[1] != len(self.nodes_):
                raise ValueError(f"expected {len(self.nodes_)} node samples, got {X.shape[1]}")
        self.n_features_in_ = len(self.nodes_)
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} node samples, got {X.shape[1]}")
        return np.array([analyze(row, self.basis_, self.order) for row in X])

    def inverse_transform(self, C):
        check_is_fitted(self, "basis_")
        C = check_array(C, dtype=float)
        return C @ self.basis_.evaluate(self.nodes_).T

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        return np.array(["psi_" + "_".join(str(int(k)) for k in n) for n in self.basis_.indices], dtype=object)


__all__ = ["HermiteTransformer", "NeuralPDERegressor"]
