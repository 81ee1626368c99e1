"""Elementary pulses and saturating-space synthesis of velocity kicks.

A *kick* by a function ``psi`` is the map ``(m, v) -> (m, v + psi m)``,
i.e. ``exp(psi Y)``.  Two primitives realize kicks with piecewise-constant
controls:

* ``pulse``: run ``X + (zeta / tau) Y`` for a short time ``tau``; this tends
  to ``exp(zeta Y)`` as ``tau -> 0`` whenever ``zeta`` lies in the span of
  the control basis.
* ``conjugated_pulse``: ``exp(-s f Y) exp(b X) exp(s f Y)`` with
  ``s = b^(-1/2)`` tends to ``exp(-f^2 Y)`` as ``b -> 0``.

Every trigonometric polynomial in ``Phi(x) = (phi(x_1), ..., phi(x_d))``
is a base element minus a sum of squares of lower-frequency ones, using

    |c| (+cos(a+b)) = |c| - (r (cos a - cos b))^2 - (r (sin a + sin b))^2
    |c| (-cos(a+b)) = |c| - (r (cos a + cos b))^2 - (r (sin a - sin b))^2
    |c| (+sin(a+b)) = |c| - (r (cos a - sin b))^2 - (r (sin a - cos b))^2
    |c| (-sin(a+b)) = |c| - (r (cos a + sin b))^2 - (r (sin a + cos b))^2

with ``r = sqrt(|c| / 2)``.  Recursing on the squares yields a plan made of
base pulses and free segments.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .._errors import BudgetExceeded
from ..hermite import HermiteState, free_evolution, state_distance
from .controls import ControlLaw, galerkin_for, phi, propagate

_ZERO = 1e-15


def _canonical(v):
    """Return ``(v', sign)`` with the first nonzero entry of ``v'`` positive."""
    v = tuple(int(k) for k in v)
    for k in v:
        if k != 0:
            return (v, 1) if k > 0 else (tuple(-j for j in v), -1)
    return v, 1


@dataclass
class TrigPoly:
    """``c0 + sum_v c_cos(v) cos(v . Phi(x)) + c_sin(v) sin(v . Phi(x))`` over integer ``v``."""

    dim: int = 1
    const: float = 0.0
    terms: dict = field(default_factory=dict)

    def __post_init__(self):
        raw, self.terms = self.terms, {}
        self.const = float(self.const)
        for v, (cc, cs) in raw.items():
            self.add_term(v, cc, cs)

    def add_term(self, v, c_cos=0.0, c_sin=0.0):
        if len(v) != self.dim:
            raise ValueError(f"frequency {v} has wrong length for dim {self.dim}")
        if any(int(k) != k for k in v):
            raise ValueError(f"frequency {v} must be integer")
        key, sign = _canonical(v)
        if all(k == 0 for k in key):
            self.const += float(c_cos)
            return self
        cc, cs = self.terms.get(key, (0.0, 0.0))
        self.terms[key] = (cc + float(c_cos), cs + sign * float(c_sin))
        return self

    @classmethod
    def from_control_vector(cls, c):
        c = np.asarray(c, dtype=float)
        dim = (len(c) - 1) // 2
        out = cls(dim, const=c[0])
        for k in range(dim):
            e = [0] * dim
            e[k] = 1
            out.add_term(e, c[1 + 2 * k], c[2 + 2 * k])
        return out

    def evaluate(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return self.evaluate_phi(phi(x))

    def evaluate_phi(self, Phi):
        """Values at points given in ``Phi``-space, shape ``(M, d)``."""
        Phi = np.asarray(Phi, dtype=float).reshape(-1, self.dim)
        out = np.full(len(Phi), self.const)
        for v, (cc, cs) in self.terms.items():
            arg = Phi @ np.asarray(v, dtype=float)
            out = out + cc * np.cos(arg) + cs * np.sin(arg)
        return out

    __call__ = evaluate

    def scaled(self, a):
        return TrigPoly(self.dim, a * self.const, {v: (a * c, a * s) for v, (c, s) in self.terms.items()})

    def __add__(self, other):
        out = TrigPoly(self.dim, self.const + other.const, dict(self.terms))
        for v, (cc, cs) in other.terms.items():
            out.add_term(v, cc, cs)
        return out

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def pruned(self, tol=_ZERO):
        return TrigPoly(
            self.dim, self.const,
            {v: (c if abs(c) > tol else 0.0, s if abs(s) > tol else 0.0)
             for v, (c, s) in self.terms.items() if abs(c) > tol or abs(s) > tol},
        )

    @property
    def is_zero(self):
        p = self.pruned()
        return abs(p.const) <= _ZERO and not p.terms

    @property
    def max_l1(self):
        return max((sum(abs(k) for k in v) for v in self.pruned().terms), default=0)

    @property
    def level(self):
        """Smallest ``n`` with every frequency of l1-size at most ``2^n``."""
        n = self.max_l1
        return 0 if n <= 1 else math.ceil(math.log2(n))

    @property
    def is_base(self):
        return self.max_l1 <= 1

    def control_vector(self):
        """Coefficients on the control basis; only for base elements."""
        if not self.is_base:
            raise ValueError("trigonometric polynomial is not in the span of the control basis")
        c = np.zeros(2 * self.dim + 1)
        c[0] = self.const
        for v, (cc, cs) in self.pruned().terms.items():
            k = int(np.flatnonzero(v)[0])
            c[1 + 2 * k] += cc
            c[2 + 2 * k] += cs
        return c

    def coefficient_norm(self):
        return abs(self.const) + sum(abs(c) + abs(s) for c, s in self.terms.values())

    def describe(self):
        parts = [f"const={self.const!r}"]
        for v, (c, s) in sorted(self.terms.items()):
            parts.append(f"{list(v)}:cos={c!r}:sin={s!r}")
        return " ".join(parts)


def split_frequency(v):
    """``v = va + vb`` with same-sign parts and ``|va|_1 = floor(|v|_1 / 2)``."""
    v = np.asarray(v, dtype=int)
    need = int(np.sum(np.abs(v))) // 2
    va = np.zeros_like(v)
    for k in range(len(v)):
        take = min(abs(v[k]), need)
        va[k] = np.sign(v[k]) * take
        need -= take
    return tuple(int(k) for k in va), tuple(int(k) for k in v - va)


def _unit(dim, v, cos_coef, sin_coef):
    return TrigPoly(dim).add_term(v, cos_coef, sin_coef)


def saturation_squares(v, c_cos, c_sin, dim):
    """Constant and squared functions with ``c_cos cos(v.Phi) + c_sin sin(v.Phi) = const - sum sq^2``."""
    va, vb = split_frequency(v)
    const, squares = 0.0, []
    if abs(c_cos) > _ZERO:
        r = math.sqrt(abs(c_cos) / 2)
        sgn = 1.0 if c_cos > 0 else -1.0
        const += abs(c_cos)
        squares.append(_unit(dim, va, r, 0.0) + _unit(dim, vb, -sgn * r, 0.0))
        squares.append(_unit(dim, va, 0.0, r) + _unit(dim, vb, 0.0, sgn * r))
    if abs(c_sin) > _ZERO:
        r = math.sqrt(abs(c_sin) / 2)
        sgn = 1.0 if c_sin > 0 else -1.0
        const += abs(c_sin)
        squares.append(_unit(dim, va, r, 0.0) + _unit(dim, vb, 0.0, -sgn * r))
        squares.append(_unit(dim, va, 0.0, r) + _unit(dim, vb, -sgn * r, 0.0))
    return const, [s.pruned() for s in squares if not s.is_zero]


def decompose(psi):
    """``psi = base - sum_i squares[i]^2`` with ``base`` in the control span and lower-level squares."""
    base = TrigPoly(psi.dim, psi.const)
    squares = []
    for v, (cc, cs) in psi.pruned().terms.items():
        if sum(abs(k) for k in v) <= 1:
            base.add_term(v, cc, cs)
            continue
        const, sq = saturation_squares(v, cc, cs, psi.dim)
        base.const += const
        squares.extend(sq)
    return base, squares


def identity_residuals(a, b):
    """Residuals of the four sum identities at arrays ``a``, ``b`` (``c = 1``)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    r = math.sqrt(0.5)
    return np.stack([
        1 - (r * (np.cos(a) - np.cos(b))) ** 2 - (r * (np.sin(a) + np.sin(b))) ** 2 - np.cos(a + b),
        1 - (r * (np.cos(a) + np.cos(b))) ** 2 - (r * (np.sin(a) - np.sin(b))) ** 2 + np.cos(a + b),
        1 - (r * (np.cos(a) - np.sin(b))) ** 2 - (r * (np.sin(a) - np.cos(b))) ** 2 - np.sin(a + b),
        1 - (r * (np.cos(a) + np.sin(b))) ** 2 - (r * (np.sin(a) + np.cos(b))) ** 2 + np.sin(a + b),
    ])


# -- pulses on states -----------------------------------------------------------


def _kick_matrix(zeta, G):
    if isinstance(zeta, TrigPoly):
        zeta = zeta.control_vector()
    z = np.asarray(zeta, dtype=float)
    n = G.hbasis.size
    if z.ndim == 0:
        return float(z) * np.eye(n)
    if z.shape == (G.cbasis.size,):
        return G.theta_matrix(z)
    if z.shape == (n, n):
        return z
    raise ValueError(
        "zeta must be a scalar, a control-basis vector, a base TrigPoly or an n x n multiplication matrix"
    )


def pulse(s0, zeta, tau, galerkin=None):
    """Run ``X + (zeta / tau) Y`` for time ``tau``; tends to ``(m, v + zeta m)`` as ``tau -> 0``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    G = galerkin or galerkin_for(s0.basis)
    gen = tau * G.X + G.Y(_kick_matrix(zeta, G))
    return HermiteState.from_vector(s0.basis, expm(gen) @ s0.vector)


def kick(s0, zeta, galerkin=None):
    """Exact ``exp(zeta Y)``: the limit of :func:`pulse`."""
    G = galerkin or galerkin_for(s0.basis)
    return HermiteState(s0.basis, s0.a, s0.bdot + _kick_matrix(zeta, G) @ s0.a)


def conjugated_pulse(s0, phif, tau, kick_time=None, galerkin=None):
    """``exp(-s f Y) exp(tau X) exp(s f Y)``, ``s = tau^(-1/2)``; tends to ``(m, v - f^2 m)``.

    The two outer factors are pulses of length ``kick_time`` (default ``tau^2``).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    kick_time = tau**2 if kick_time is None else kick_time
    G = galerkin or galerkin_for(s0.basis)
    M = _kick_matrix(phif, G)
    s = tau**-0.5
    st = pulse(s0, s * M, kick_time, G)
    st = free_evolution(st, tau)
    return pulse(st, -s * M, kick_time, G)


# -- plans -----------------------------------------------------------------------


@dataclass
class Segment:
    """``kind`` is ``"pulse"`` (kick by ``control`` over ``duration``) or ``"free"``."""

    kind: str
    duration: float
    control: np.ndarray = None
    level: int = 0

    def law_value(self, dim):
        if self.kind == "free":
            return np.zeros(2 * dim + 1)
        return -np.asarray(self.control, dtype=float) / self.duration


@dataclass
class SynthesisPlan:
    dim: int
    segments: list = field(default_factory=list)
    error: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def duration(self):
        return float(sum(s.duration for s in self.segments))

    @property
    def n_pulses(self):
        return sum(s.kind == "pulse" for s in self.segments)

    def to_law(self):
        if not self.segments:
            return ControlLaw.empty(self.dim)
        return ControlLaw(
            [s.duration for s in self.segments],
            np.stack([s.law_value(self.dim) for s in self.segments]),
        )

    def then(self, other):
        """Plan that runs ``self`` first, then ``other``."""
        return SynthesisPlan(self.dim, self.segments + other.segments, meta=dict(self.meta))

    def to_text(self):
        """One line per segment: ``kind, duration, level, c_0 ... c_2d``."""
        lines = [f"# plan dim={self.dim} segments={len(self.segments)} duration={self.duration!r}"]
        for s in self.segments:
            ctrl = np.zeros(2 * self.dim + 1) if s.control is None else s.control
            vals = " ".join(repr(float(c)) for c in ctrl)
            lines.append(f"{s.kind}, {float(s.duration)!r}, {s.level}, {vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = dict(kv.split("=") for kv in lines[0].lstrip("# ").split()[1:])
        plan = cls(int(header["dim"]))
        for ln in lines[1:]:
            kind, dur, level, vals = [p.strip() for p in ln.split(",", 3)]
            ctrl = np.array([float(v) for v in vals.split()])
            plan.segments.append(
                Segment(kind, float(dur), None if kind == "free" else ctrl, int(level))
            )
        return plan


def free_plan(duration, dim):
    return SynthesisPlan(dim, [Segment("free", float(duration))])


def _realize(psi, t, kick_power, level=0):
    """Segments whose execution approximates ``exp(psi Y)`` at time scale ``t``."""
    base, squares = decompose(psi)
    segs = []
    for sq in squares:
        b = t
        s = b**-0.5
        inner = t**kick_power
        segs += _realize(sq.scaled(s), inner, kick_power, level + 1)
        segs.append(Segment("free", b, None, level))
        segs += _realize(sq.scaled(-s), inner, kick_power, level + 1)
    if not base.is_zero:
        segs.append(Segment("pulse", t, base.control_vector(), level))
    return segs


def build_plan(psi, t, kick_power=3.0):
    return SynthesisPlan(psi.dim, _realize(psi, t, kick_power))


def execute(plan, s0, sigma=None, record=False):
    return propagate(s0, plan.to_law(), sigma=sigma, record=record)


def unit_state(hbasis):
    """The stationary state ``(1, 0)``."""
    return HermiteState(hbasis, hbasis.one, np.zeros(hbasis.size))


def kick_target(s0, psi, galerkin=None):
    """``(m, v + psi(Phi) m)`` with the truncated operator the plans converge to."""
    G = galerkin or galerkin_for(s0.basis)
    return kick(s0, G.phi_function_matrix(psi.evaluate_phi), G)


def saturate_plan(psi, eps, T_budget, state=None, t0=1e-2, shrink=10.0, max_refinements=6,
                  kick_power=3.0, hbasis=None):
    """Plan of pulses and free segments approximating ``exp(psi Y)``.

    The time scale starts at ``t0`` and is divided by ``shrink`` until the
    executed plan lands within ``eps`` of ``(m, v + psi m)`` for ``state``
    (default: the stationary unit state) and fits in ``T_budget``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if state is None:
        if hbasis is None:
            raise ValueError("need a probe state or a Hermite basis")
        state = unit_state(hbasis)
    target = kick_target(state, psi)
    if psi.is_zero:
        plan = SynthesisPlan(psi.dim, [], error=state_distance(state, target))
        return plan
    t, best = t0, math.inf
    for _ in range(max_refinements + 1):
        plan = build_plan(psi, t, kick_power)
        if plan.duration <= T_budget:
            err = state_distance(execute(plan, state), target)
            best = min(best, err)
            if err < eps:
                plan.error = err
                plan.meta.update(time_scale=t, level=psi.level)
                return plan
        t /= shrink
    raise BudgetExceeded(
        f"saturating plan did not reach eps={eps} within budget (best error {best:.3e})",
        achieved=best,
    )


__all__ = [
    "Segment", "SynthesisPlan", "TrigPoly", "build_plan", "conjugated_pulse",
    "decompose", "execute", "free_plan", "identity_residuals", "kick", "kick_target", "pulse",
    "saturate_plan", "saturation_squares", "split_frequency", "unit_state",
]
