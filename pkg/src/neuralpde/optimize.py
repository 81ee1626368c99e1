"""Projected gradient descent over coefficient fields.

Gradients are taken in the space-time L2 metric (the densities returned by
:func:`neuralpde.adjoint.assemble_gradients`), so step sizes do not scale
with the grid.  Feasibility is enforced by :func:`project` after every trial
step and acceptance uses the projected Armijo rule.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from ._errors import NumericalFailure
from .adjoint import GradientFields, directional_derivative, loss_and_gradient
from .parabolic import CoefficientFields, cell_volume

FIELDS = ("alpha", "beta", "gamma", "theta")


@dataclass(frozen=True)
class ConstraintBox:
    """``|alpha| <= A``, ``b I <= beta <= B I``, ``|gamma| <= C``, ``|theta| <= D`` pointwise."""

    A: float
    b: float
    B: float
    C: float
    D: float

    def __post_init__(self):
        for name in ("A", "b", "B", "C", "D"):
            if not getattr(self, name) > 0:
                raise ValueError(f"box bound {name} must be positive")
        if self.b > self.B:
            raise ValueError("need b <= B")

    def contains(self, coeffs, tol=1e-10):
        alpha_norm = np.sqrt(np.sum(coeffs.alpha**2, axis=1))
        eig = _beta_eigvalsh(coeffs.beta)
        return bool(
            np.all(alpha_norm <= self.A + tol)
            and np.all(eig >= self.b - tol)
            and np.all(eig <= self.B + tol)
            and np.all(np.abs(coeffs.gamma) <= self.C + tol)
            and np.all(np.abs(coeffs.theta) <= self.D + tol)
        )


def _beta_points(beta):
    """``(nt, d, d, *s)`` -> ``(..., d, d)`` stack of matrices."""
    d = beta.shape[1]
    return np.moveaxis(beta, (1, 2), (-2, -1)).reshape(-1, d, d)


def _beta_eigvalsh(beta):
    return np.linalg.eigvalsh(_beta_points(beta))


def _project_beta(beta, b, B):
    d = beta.shape[1]
    if d == 1:
        return np.clip(beta, b, B)
    mats = _beta_points(beta)
    w, V = np.linalg.eigh(mats)
    out = np.einsum("pik,pk,pjk->pij", V, np.clip(w, b, B), V)
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    moved = np.moveaxis(beta, (1, 2), (-2, -1))
    return np.moveaxis(out.reshape(moved.shape), (-2, -1), (1, 2)).copy()


def project(coeffs, box):
    """Pointwise Euclidean projection onto the box; idempotent."""
    norm = np.sqrt(np.sum(coeffs.alpha**2, axis=1, keepdims=True))
    scale = np.minimum(1.0, box.A / np.maximum(norm, np.finfo(float).tiny))
    return CoefficientFields(
        alpha=coeffs.alpha * scale,
        beta=_project_beta(coeffs.beta, box.b, box.B),
        gamma=np.clip(coeffs.gamma, -box.C, box.C),
        theta=np.clip(coeffs.theta, -box.D, box.D),
        delta=coeffs.delta.copy(),
    )


def initial_coefficients(grid, nt, box):
    """Feasible interior start: ``beta = (b+B)/2 I``, ``alpha = 0``, ``gamma = min(C, 1)``, ``theta = 0``."""
    return CoefficientFields.constant(
        grid, nt, alpha=0.0, beta=0.5 * (box.b + box.B), gamma=min(box.C, 1.0), theta=0.0
    )


def random_admissible(template, box, rng, fields=FIELDS):
    """Random feasible fields; entries outside ``fields`` are copied from ``template``."""
    c = template.copy()
    d = c.dim
    if "alpha" in fields:
        c.alpha = rng.uniform(-1, 1, c.alpha.shape) * box.A / np.sqrt(d)
    if "beta" in fields:
        lo, hi = box.b, box.B
        if d == 1:
            c.beta = rng.uniform(lo, hi, c.beta.shape)
        else:
            diag = rng.uniform(lo, hi, (2,) + c.gamma.shape)
            off = rng.uniform(-1, 1, c.gamma.shape) * 0.5 * (diag.min(axis=0) - lo)
            rows = [np.stack([diag[0], off], axis=1), np.stack([off, diag[1]], axis=1)]
            c.beta = np.stack(rows, axis=1)
    if "gamma" in fields:
        c.gamma = rng.uniform(-box.C, box.C, c.gamma.shape)
    if "theta" in fields:
        c.theta = rng.uniform(-box.D, box.D, c.theta.shape)
    return project(c, box)


@dataclass
class TrainConfig:
    max_iters: int = 200
    step_init: float = 1.0
    backtrack: float = 0.5
    tol: float = 1e-12
    grad_tol: float = 1e-10
    seed: int = 0
    armijo_c: float = 1e-4
    growth: float = 2.0
    max_backtracks: int = 40
    free: tuple = FIELDS
    spatially_constant: bool = False
    smoothness: float = 0.0

    def __post_init__(self):
        if not self.step_init > 0:
            raise ValueError("step_init must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not self.smoothness >= 0:
            raise ValueError("smoothness must be >= 0")
        if int(self.max_iters) < 0:
            raise ValueError("max_iters must be >= 0")
        unknown = set(self.free) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown free fields {sorted(unknown)}")
        self.free = tuple(self.free)


def total_loss_and_gradient(p, samples, coeffs):
    """Sum of per-sample losses and gradients; coefficients shared by all samples."""
    loss, grad = 0.0, GradientFields.zeros_like(coeffs)
    for m0, mT in samples:
        q = p.with_coeffs(coeffs, m0=m0)
        q.box = None
        li, gi = loss_and_gradient(q, mT)
        loss += li
        grad = grad + gi
    return loss, grad


def smoothness_penalty(coeffs, p, names, weight):
    """``weight * sum_k dt h^d sum_x |grad_h c|^2`` over the fields ``names``, with its density gradient.

    Forward differences along every spatial axis; the gradient is returned
    in the same density form as the loss gradient.
    """
    grad = GradientFields.zeros_like(coeffs)
    if weight == 0:
        return 0.0, grad
    h, dim, total = p.grid.h, p.grid.dim, 0.0
    for name in names:
        c = getattr(coeffs, name)
        lead = {"alpha": 2, "beta": 3}.get(name, 1)
        g = np.zeros_like(c)
        for ax in range(lead, lead + dim):
            d = np.diff(c, axis=ax) / h
            total += float(np.sum(d**2))
            pad = [(0, 0)] * c.ndim
            pad[ax] = (1, 0)
            before = np.pad(d, pad)
            pad[ax] = (0, 1)
            g += 2.0 * (before - np.pad(d, pad)) / h
        setattr(grad, name, weight * g)
    return weight * p.dt * cell_volume(p.grid) * total, grad


def _objective(p, samples, coeffs, cfg):
    loss, grad = total_loss_and_gradient(p, samples, coeffs)
    if cfg.smoothness > 0:
        pen, pgrad = smoothness_penalty(coeffs, p, cfg.free, cfg.smoothness)
        loss, grad = loss + pen, grad + pgrad
    return loss, grad


def _restrict(grad, cfg, dim):
    """Zero the gradient of fixed fields; average over space in the constant mode."""
    out = GradientFields.zeros_like(grad)
    for name in cfg.free:
        g = getattr(grad, name).copy()
        if cfg.spatially_constant:
            lead = {"alpha": 2, "beta": 3}.get(name, 1)
            axes = tuple(range(lead, lead + dim))
            g = np.broadcast_to(g.mean(axis=axes, keepdims=True), g.shape).copy()
        setattr(out, name, g)
    return out


def _step(coeffs, grad, s):
    return CoefficientFields(
        coeffs.alpha - s * grad.alpha, coeffs.beta - s * grad.beta,
        coeffs.gamma - s * grad.gamma, coeffs.theta - s * grad.theta, coeffs.delta,
    )


def _difference(a, b):
    return GradientFields(a.alpha - b.alpha, a.beta - b.beta, a.gamma - b.gamma, a.theta - b.theta)


def _l2(fields, p):
    return float(np.sqrt(max(directional_derivative(fields, fields, p), 0.0)))


def projected_gradient_norm(coeffs, grad, box, p):
    """L2 norm of ``x - P(x - g)``; zero exactly at box-constrained stationary points."""
    return _l2(_difference(coeffs, project(_step(coeffs, grad, 1.0), box)), p)


@dataclass
class TrainResult:
    coeffs: CoefficientFields
    history: list = field(default_factory=list)
    status: str = "max_iters"

    @property
    def losses(self):
        return [row[1] for row in self.history]

    @property
    def n_iter(self):
        return self.history[-1][0] if self.history else 0

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "step", "grad_norm"])
            for it, loss, step, gnorm in self.history:
                w.writerow([it, repr(float(loss)), repr(float(step)), repr(float(gnorm))])


def train(p, samples, box, cfg=None, coeffs=None, callback=None):
    """Minimize ``sum_i ||m^i(T) - mT^i||^2`` over the shared coefficients of ``p``.

    With ``cfg.smoothness > 0`` the objective (and the logged loss) also
    carries :func:`smoothness_penalty` on the free fields.

    ``samples`` is a list of ``(m0, mT)`` pairs on ``p.grid``.  ``coeffs``
    defaults to ``p.coeffs``; it is projected onto ``box`` before starting.
    """
    cfg = cfg or TrainConfig()
    if not samples:
        raise ValueError("need at least one sample")
    x = project(p.coeffs if coeffs is None else coeffs, box)
    loss, grad = _objective(p, samples, x, cfg)
    grad = _restrict(grad, cfg, p.grid.dim)
    s = cfg.step_init
    result = TrainResult(coeffs=x)
    for it in range(int(cfg.max_iters) + 1):
        gnorm = projected_gradient_norm(x, grad, box, p)
        result.history.append((it, loss, s, gnorm))
        if callback is not None:
            callback(it, loss, x)
        if loss <= cfg.tol or gnorm <= cfg.grad_tol:
            result.status = "converged"
            break
        if it == cfg.max_iters:
            break
        accepted = False
        for _ in range(cfg.max_backtracks):
            trial = project(_step(x, grad, s), box)
            slope = directional_derivative(grad, _difference(trial, x), p)
            try:
                trial_loss, trial_grad = _objective(p, samples, trial, cfg)
            except NumericalFailure:
                s *= cfg.backtrack
                continue
            if trial_loss <= loss + cfg.armijo_c * slope:
                accepted = True
                break
            s *= cfg.backtrack
        if not accepted:
            result.status = "line_search_failed"
            break
        x, loss, grad = trial, trial_loss, _restrict(trial_grad, cfg, p.grid.dim)
        result.coeffs = x
        s *= cfg.growth
    result.coeffs = x
    return result


@dataclass
class SweepReport:
    losses: np.ndarray
    feasible: list
    statuses: list

    @property
    def best(self):
        return float(np.min(self.losses))

    @property
    def spread(self):
        return float(np.max(self.losses) - np.min(self.losses))


def existence_sweep(p, samples, box, cfg=None, n_draws=5):
    """Train from ``n_draws`` random feasible starts and report the final losses."""
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    losses, feasible, statuses = [], [], []
    for _ in range(n_draws):
        start = random_admissible(p.coeffs, box, rng, cfg.free)
        res = train(p, samples, box, cfg, coeffs=start)
        losses.append(res.losses[-1])
        feasible.append(box.contains(res.coeffs))
        statuses.append(res.status)
    return SweepReport(np.array(losses), feasible, statuses)


__all__ = [
    "ConstraintBox", "SweepReport", "TrainConfig", "TrainResult", "cell_volume",
    "existence_sweep", "initial_coefficients", "project", "projected_gradient_norm",
    "random_admissible", "smoothness_penalty", "total_loss_and_gradient", "train",
]
