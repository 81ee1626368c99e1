"""Steering plans: displacement by free flow, velocity by saturating kicks, and both together."""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .._errors import BudgetExceeded, ResolutionExceeded, UnsupportedError
from ..hermite import HermiteState, free_evolution, state_distance, state_norm
from .controls import galerkin_for, phi, propagate
from .synthesis import SynthesisPlan, TrigPoly, build_plan, execute, free_plan, unit_state

_TINY = 1e-14


# -- displacement -------------------------------------------------------------------


def _active(hbasis, *coeffs):
    mask = np.zeros(hbasis.size, dtype=bool)
    for c in coeffs:
        mask |= np.abs(c) > _TINY
    return mask


def max_time_for(hbasis, a0, aT, T):
    """Upper end of the admissible free-flight window ``(0, min(T, pi / C))``."""
    mask = _active(hbasis, a0, aT)
    C = float(np.max(np.sqrt(hbasis.rho[mask]), initial=0.0))
    return T if C == 0 else min(T, math.pi / C)


def steer_displacement(m0, mT, T, hbasis, tau=None):
    """Initial velocity ``v0`` such that free flow maps ``(m0, v0)`` to displacement ``mT`` at ``tau``.

    ``m0`` and ``mT`` are coefficient vectors.  ``tau`` defaults to half the
    admissible window, where every active ``sin(sqrt(rho) tau)`` is positive.
    """
    m0 = np.asarray(m0, dtype=float)
    mT = np.asarray(mT, dtype=float)
    if m0.shape != (hbasis.size,) or mT.shape != (hbasis.size,):
        raise ValueError("coefficient vectors do not match the basis")
    if not (np.all(np.isfinite(m0)) and np.all(np.isfinite(mT))):
        raise ValueError("coefficients must be finite")
    if not T > 0:
        raise ValueError("T must be positive")
    window = max_time_for(hbasis, m0, mT, T)
    tau = 0.5 * window if tau is None else float(tau)
    if not 0 < tau < window:
        raise ValueError(f"tau must lie in (0, {window})")
    w = np.sqrt(hbasis.rho)
    v0 = np.zeros(hbasis.size)
    zero = w == 0
    v0[zero] = (mT[zero] - m0[zero]) / tau
    nz = ~zero & _active(hbasis, m0, mT)
    v0[nz] = (mT[nz] - m0[nz] * np.cos(w[nz] * tau)) * w[nz] / np.sin(w[nz] * tau)
    return tau, v0


# -- velocity -------------------------------------------------------------------------


def frequencies(dim, F):
    """Canonical integer vectors with ``|v|_inf <= F`` (first nonzero entry positive)."""
    out = []
    for v in itertools.product(range(-F, F + 1), repeat=dim):
        nz = [k for k in v if k != 0]
        if nz and nz[0] > 0:
            out.append(v)
    return sorted(out, key=lambda v: (sum(abs(k) for k in v), v))


def _design(x, dim, F, in_phi=False):
    """Columns ``1, cos(v.Phi), sin(v.Phi)`` at points ``x`` (or at ``Phi``-values) and their labels."""
    P = np.asarray(x, dtype=float).reshape(-1, dim)
    P = P if in_phi else phi(P)
    cols, labels = [np.ones(len(P))], [("const", None)]
    for v in frequencies(dim, F):
        arg = P @ np.asarray(v, dtype=float)
        cols += [np.cos(arg), np.sin(arg)]
        labels += [("cos", v), ("sin", v)]
    return np.stack(cols, axis=1), labels


def _to_trigpoly(coef, labels, dim):
    psi = TrigPoly(dim)
    for c, (kind, v) in zip(coef, labels):
        if kind == "const":
            psi.const += c
        elif kind == "cos":
            psi.add_term(v, c, 0.0)
        else:
            psi.add_term(v, 0.0, c)
    return psi


def _zero_points(coeffs, hbasis, R):
    """Sample points on the zero set of the displacement inside the ball of radius ``R``."""
    if hbasis.dim == 1:
        x = np.linspace(-R, R, 4001)
        y = hbasis.evaluate(x[:, None]) @ coeffs
        s = np.sign(y)
        idx = np.flatnonzero(s[:-1] * s[1:] <= 0)
        t = y[idx] / np.where(y[idx] - y[idx + 1] == 0, 1, y[idx] - y[idx + 1])
        return (x[idx] + t * (x[idx + 1] - x[idx]))[:, None]
    g = np.linspace(-R, R, 201)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X1.ravel(), X2.ravel()], axis=1)
    y = (hbasis.evaluate(pts) @ coeffs).reshape(X1.shape)
    s = np.sign(y)
    edge = np.zeros_like(y, dtype=bool)
    edge[:-1] |= s[:-1] * s[1:] <= 0
    edge[:, :-1] |= s[:, :-1] * s[:, 1:] <= 0
    found = pts[edge.ravel() & (np.sum(pts**2, axis=1) <= R * R)]
    return found


@dataclass
class VelocityFit:
    psi: TrigPoly
    F: int
    radius: float
    eta: float
    residual: float
    mask: np.ndarray = field(repr=False, default=None)


def _masked_norm(vals, weights, mask):
    return float(np.sqrt(np.sum(weights[mask] * vals[mask] ** 2)))


def fit_velocity(s0, v_target, eps, F_max=4, F=None, ridge=1e-10, galerkin=None):
    """Least-squares trigonometric ``psi`` with ``m0 psi ~ v - v0`` away from the zeros of ``m0``.

    The ball radius and the zero-set margin ``eta`` are chosen so that the
    velocity mass they exclude is below ``eps / 4`` each.  Frequencies are
    raised from 1 to ``F_max`` until the Galerkin residual drops below
    ``eps / 4``; otherwise the best fit is returned.
    """
    G = galerkin or galerkin_for(s0.basis)
    hb, x, w = s0.basis, G.nodes, G.weights
    m0 = G.at_nodes(s0.a)
    dv = np.asarray(v_target, dtype=float) - s0.bdot
    v0n, vTn = G.at_nodes(s0.bdot), G.at_nodes(np.asarray(v_target, dtype=float))
    r = np.sqrt(np.sum(x**2, axis=1))
    radius = float(np.max(r))
    for R in np.arange(0.5, np.max(r) + 0.5, 0.25):
        out = r > R
        if _masked_norm(v0n, w, out) + _masked_norm(vTn, w, out) < eps / 4:
            radius = float(R)
            break
    inside = r <= radius
    zeros = _zero_points(s0.a, hb, radius)
    eta = 0.0
    if len(zeros):
        dist = np.min(np.linalg.norm(x[:, None, :] - zeros[None, :, :], axis=2), axis=1)
        for cand in (0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001):
            near = inside & (dist < cand)
            if _masked_norm(v0n, w, near) + _masked_norm(vTn, w, near) < eps / 4:
                eta = cand
                break
        else:
            eta = 0.001
        mask = inside & (dist >= eta)
    else:
        mask = inside
    target = G.at_nodes(dv)
    best = None
    F_range = [F] if F is not None else range(1, F_max + 1)
    for Fc in F_range:
        A, labels = _design(x, hb.dim, Fc)
        sw = np.sqrt(w * mask)
        lhs = (A * m0[:, None]) * sw[:, None]
        rhs = target * sw
        n = lhs.shape[1]
        coef = np.linalg.solve(lhs.T @ lhs + ridge * np.eye(n) * max(1.0, np.trace(lhs.T @ lhs) / n),
                               lhs.T @ rhs)
        psi = _to_trigpoly(coef, labels, hb.dim).pruned()
        res = float(np.linalg.norm(G.phi_function_matrix(psi.evaluate_phi) @ s0.a - dv))
        if best is None or res < best.residual:
            best = VelocityFit(psi, Fc, radius, eta, res, mask)
        if res < eps / 4:
            break
    return best


@dataclass
class KickSequence:
    """Kicks ``exp(psi_k Y)`` separated by free flights ``flights[k]`` (one fewer than kicks)."""

    kicks: list
    flights: np.ndarray
    residual: float


def _kick_dictionary(G, F):
    key = ("kick-dictionary", F)
    cache = G.__dict__.setdefault("_steering_cache", {})
    if key not in cache:
        lam, Q = G.phi_spectrum
        A, labels = _design(lam, G.hbasis.dim, F, in_phi=True)
        cache[key] = (np.einsum("ik,kj,lk->jil", Q, A, Q), labels)
    return cache[key]


def _flow(a, b, t, w):
    zero = w == 0
    c, s = np.cos(w * t), np.sin(w * t)
    ws = np.where(zero, 1.0, w)
    a2 = np.where(zero, a + b * t, a * c + b * s / ws)
    b2 = np.where(zero, b, -w * a * s + b * c)
    return a2, b2


def fit_kick_sequence(s0, goal, n_kicks, max_flight, F=4, ridge=1e-5, n_starts=4, seed=0,
                      warm=None, galerkin=None):
    """Kick coefficients and flight times minimizing the distance to ``goal`` in the short-pulse limit.

    Each kick multiplies the current displacement by a trigonometric
    polynomial with frequencies up to ``F``.  Free flights in between move
    the displacement, so later kicks see a different multiplier; this is
    what lets a few low-frequency kicks reach velocities a single kick
    cannot.  Solved by bounded nonlinear least squares from several starts.
    """
    G = galerkin or galerkin_for(s0.basis)
    hb = s0.basis
    Ms, labels = _kick_dictionary(G, F)
    nc, K = len(Ms), int(n_kicks)
    w = np.sqrt(hb.rho)
    weight = np.concatenate([np.sqrt(1 + hb.rho), np.ones(hb.size)])
    target = goal.vector

    def unpack(x):
        return x[: K * nc].reshape(K, nc), x[K * nc:]

    def run(x):
        cs, ds = unpack(x)
        a, b = s0.a, s0.bdot
        for k in range(K):
            b = b + np.tensordot(cs[k], Ms, axes=1) @ a
            if k < K - 1:
                a, b = _flow(a, b, ds[k], w)
        return np.concatenate([a, b])

    def residual(x):
        return np.concatenate([weight * (run(x) - target), math.sqrt(ridge) * x[: K * nc]])

    lb = np.concatenate([np.full(K * nc, -np.inf), np.zeros(K - 1)])
    ub = np.concatenate([np.full(K * nc, np.inf), np.full(K - 1, max_flight)])
    rng = np.random.default_rng(seed)
    starts = [] if warm is None else [np.clip(warm, lb, ub)]
    starts += [np.concatenate([0.1 * rng.standard_normal(K * nc), rng.uniform(0.3, 1.0, K - 1) * max_flight])
               for _ in range(n_starts)]
    best = None
    for x0 in starts:
        sol = least_squares(residual, x0, bounds=(lb, ub))
        err = float(np.linalg.norm(weight * (run(sol.x) - target)))
        if best is None or err < best[0]:
            best = (err, sol.x)
    cs, ds = unpack(best[1])
    kicks = [_to_trigpoly(c, labels, hb.dim).pruned() for c in cs]
    return KickSequence(kicks, ds.copy(), best[0])


def _sequence_vector(seq, F, dim):
    _, labels = _design(np.zeros((1, dim)), dim, F)
    rows = []
    for psi in seq.kicks:
        row = []
        for kind, v in labels:
            if kind == "const":
                row.append(psi.const)
            else:
                c, s = psi.terms.get(v, (0.0, 0.0))
                row.append(c if kind == "cos" else s)
        rows.append(row)
    return np.concatenate([np.ravel(rows), seq.flights])


def realize_sequence(seq, s0, goal, eps, T, F=4, t0=1e-2, shrink=10.0, max_refinements=5,
                     kick_power=3.0, galerkin=None):
    """Pulse plan for a kick sequence, re-solving the remaining kicks after each executed one."""
    G = galerkin or galerkin_for(s0.basis)
    hb = s0.basis
    t, best = t0, math.inf
    for _ in range(max_refinements + 1):
        plan, state, cur = SynthesisPlan(hb.dim), s0, seq
        for _k in range(len(seq.kicks)):
            part = build_plan(cur.kicks[0], t, kick_power)
            if cur.flights.size:
                part = part.then(free_plan(cur.flights[0], hb.dim)) if cur.flights[0] > 0 else part
            state = execute(part, state) if part.segments else state
            plan = plan.then(part)
            if len(cur.kicks) == 1:
                break
            rest = KickSequence(cur.kicks[1:], cur.flights[1:], cur.residual)
            cur = fit_kick_sequence(state, goal, len(rest.kicks), float(np.max(seq.flights, initial=0.0)),
                                    F=F, n_starts=0, warm=_sequence_vector(rest, F, hb.dim), galerkin=G)
        err = state_distance(state, goal)
        if plan.duration <= T:
            best = min(best, err)
            if err < eps:
                plan.error = err
                plan.meta.update(n_kicks=len(seq.kicks), time_scale=t, model_residual=seq.residual)
                return plan
        t /= shrink
    raise BudgetExceeded(f"kick sequence missed eps={eps} (best {best:.3e})", achieved=best)


def _single_kick_plan(s0, goal, fit, eps, T, t0, shrink, max_refinements, corrections, kick_power, G):
    hb = s0.basis
    t, best, best_plan = t0, math.inf, None
    for _ in range(max_refinements + 1):
        psi = fit.psi
        for _ in range(corrections + 1):
            plan = build_plan(psi, t, kick_power)
            if plan.duration > T:
                break
            reached = execute(plan, s0) if plan.segments else s0
            err = state_distance(reached, goal)
            if err < best:
                best, best_plan = err, plan
                best_plan.meta.update(psi=psi, F=fit.F, radius=fit.radius, eta=fit.eta,
                                      fit_residual=fit.residual, time_scale=t)
            if err < eps:
                best_plan.error = err
                return best_plan
            corr = fit_velocity(HermiteState(hb, s0.a, reached.bdot), goal.bdot, eps, F=fit.F, galerkin=G)
            psi = (psi + corr.psi).pruned()
        t /= shrink
    raise BudgetExceeded(f"velocity plan missed eps={eps} (best {best:.3e})", achieved=best)


def steer_velocity(s0, v_target, eps, T, F_max=4, t0=1e-2, shrink=10.0, max_refinements=5,
                   corrections=4, kick_power=3.0, max_kicks=4, galerkin=None):
    """Plan driving ``(m0, v0)`` to within ``eps`` of ``(m0, v_target)`` in ``H1_w x L2_w``.

    A single kick ``exp(psi Y)`` is used when ``m0 psi`` can approximate the
    velocity change; after each execution the remaining mismatch is fitted
    again and added to ``psi`` (defect correction).  Otherwise a short
    sequence of kicks and free flights is fitted (:func:`fit_kick_sequence`)
    and realized in closed loop.
    """
    G = galerkin or galerkin_for(s0.basis)
    hb = s0.basis
    if callable(v_target):
        v_target = G.analyze(v_target)
    v_target = np.asarray(v_target, dtype=float)
    if v_target.shape != (hb.size,):
        raise ValueError("target velocity does not match the basis")
    goal = HermiteState(hb, s0.a, v_target)
    if state_distance(s0, goal) < eps / 4:
        return SynthesisPlan(hb.dim, [], error=state_distance(s0, goal), meta={"trivial": True})
    if state_norm(HermiteState(hb, s0.a, 0 * s0.a)) == 0:
        raise UnsupportedError("velocity steering needs a nonzero displacement")
    fit = fit_velocity(s0, v_target, eps, F_max=F_max, galerkin=G)
    if fit.residual < eps / 2:
        try:
            return _single_kick_plan(s0, goal, fit, eps, T, t0, shrink, max_refinements,
                                     corrections, kick_power, G)
        except BudgetExceeded:
            if max_kicks < 2:
                raise
    best = fit.residual
    for K in range(2, max_kicks + 1):
        seq = fit_kick_sequence(s0, goal, K, 0.9 * T / (K - 1), F=F_max, galerkin=G)
        best = min(best, seq.residual)
        if seq.residual < eps / 2:
            return realize_sequence(seq, s0, goal, eps, T, F=F_max, t0=t0, shrink=shrink,
                                    max_refinements=max_refinements, kick_power=kick_power, galerkin=G)
    raise ResolutionExceeded(
        f"velocity residual {best:.3e} >= eps / 2 at frequency {F_max} with up to {max_kicks} kicks",
        residual=best,
    )


# -- full steering ---------------------------------------------------------------------


def _is_stationary(s):
    return np.all(np.abs(s.bdot) <= _TINY) and np.all(np.abs(s.a[1:]) <= _TINY)


def _fit_score(s, v, eps, G):
    return fit_velocity(s, v, eps, galerkin=G).residual


def choose_flight_time(start, sT, eps, T, n_candidates=24, galerkin=None):
    """Free-flight time minimizing the two predicted projection residuals."""
    G = galerkin or galerkin_for(start.basis)
    hb = start.basis
    window = max_time_for(hb, start.a, sT.a, T)
    best = None
    for frac in np.linspace(0.04, 0.96, n_candidates):
        tau = frac * window
        _, v0 = steer_displacement(start.a, sT.a, T, hb, tau)
        r1 = _fit_score(start, v0, eps, G)
        mid = free_evolution(HermiteState(hb, start.a, v0), tau)
        r2 = _fit_score(HermiteState(hb, sT.a, mid.bdot), sT.bdot, eps, G)
        score = r1 * (1 + tau) + r2
        if best is None or score < best[0]:
            best = (score, tau)
    return best[1]


def _direct_sequence(start, sT, eps, T, max_kicks, G, velocity_kw):
    best = math.inf
    for K in range(2, max_kicks + 1):
        seq = fit_kick_sequence(start, sT, K, 0.9 * T / (K - 1), galerkin=G)
        best = min(best, seq.residual)
        if seq.residual < eps / 2:
            kw = {k: v for k, v in velocity_kw.items() if k in ("t0", "shrink", "max_refinements", "kick_power")}
            plan = realize_sequence(seq, start, sT, eps, T, galerkin=G, **kw)
            plan.meta.update(route="kick-sequence")
            return plan
    raise ResolutionExceeded(f"no kick sequence of up to {max_kicks} kicks reaches eps / 2", residual=best)


def steer_short(start, sT, eps, T, max_kicks=6, galerkin=None, **velocity_kw):
    """``velocity -> free(tau) -> velocity`` plan from ``start`` towards ``sT`` inside ``T``.

    When either velocity leg is out of reach at the configured frequency
    range, a direct sequence of kicks and free flights is fitted instead.
    """
    G = galerkin or galerkin_for(start.basis)
    hb = start.basis
    try:
        tau = choose_flight_time(start, sT, eps, 0.9 * T, galerkin=G)
        _, v0 = steer_displacement(start.a, sT.a, T, hb, tau)
        budget = 0.05 * T
        p1 = steer_velocity(start, v0, eps / 2, budget, galerkin=G, **velocity_kw)
        s1 = execute(p1, start) if p1.segments else start
        s2 = free_evolution(s1, tau)
        p2 = steer_velocity(s2, sT.bdot, eps / 2, budget, galerkin=G, **velocity_kw)
        plan = p1.then(free_plan(tau, hb.dim)).then(p2)
        plan.meta.update(tau=tau, route="velocity-free-velocity")
        final = execute(plan, start)
        if state_distance(final, sT) >= eps:
            raise BudgetExceeded("composed legs missed eps", achieved=state_distance(final, sT))
        return plan
    except (ResolutionExceeded, BudgetExceeded):
        return _direct_sequence(start, sT, eps, T, max_kicks, G, velocity_kw)


def steer_full(s0, sT, eps, T, exact_duration=True, prefix=None, galerkin=None, **velocity_kw):
    """Plan from ``s0`` to within ``eps`` of ``sT``.

    A zero initial displacement with nonzero velocity first flies freely for
    ``prefix``.  With ``exact_duration`` the plan routes through the
    stationary state ``(1, 0)``, waits there, and lasts exactly ``T``.
    """
    G = galerkin or galerkin_for(s0.basis)
    hb = s0.basis
    if not T > 0 or not eps > 0:
        raise ValueError("T and eps must be positive")
    plan = SynthesisPlan(hb.dim)
    start = s0
    if np.all(np.abs(s0.a) <= _TINY):
        if np.all(np.abs(s0.bdot) <= _TINY):
            raise UnsupportedError("the zero state is stationary under every control")
        a_pre = min(0.1 * T, 0.5) if prefix is None else prefix
        plan = plan.then(free_plan(a_pre, hb.dim))
        start = free_evolution(s0, a_pre)
    used = plan.duration
    if not exact_duration:
        out = plan.then(steer_short(start, sT, eps, T - used, galerkin=G, **velocity_kw))
    else:
        hub = unit_state(hb)
        if _is_stationary(start):
            leg1, hub = SynthesisPlan(hb.dim), start
        else:
            leg1 = steer_short(start, hub, eps / 2, (T - used) / 2, galerkin=G, **velocity_kw)
        leg2 = steer_short(hub, sT, eps / 2, (T - used - leg1.duration), galerkin=G, **velocity_kw)
        pad = T - used - leg1.duration - leg2.duration
        if pad < 0:
            raise BudgetExceeded("steering legs do not fit in T", achieved=math.inf)
        out = plan.then(leg1)
        if pad > 0:
            out = out.then(free_plan(pad, hb.dim))
        out = out.then(leg2)
    final = execute(out, s0) if out.segments else s0
    out.error = state_distance(final, sT)
    return out


# -- traces -----------------------------------------------------------------------------


def execution_trace(plan, s0, target=None, sigma=None):
    """Rows ``(t, ||m||_H1w, ||dm/dt||_L2w, error_to_target)`` at every segment boundary."""
    _, times, states = propagate(s0, plan.to_law(), sigma=sigma, record=True) if plan.segments \
        else (s0, np.zeros(1), [s0])
    rows = []
    for t, s in zip(times, states):
        h1 = float(np.sqrt(np.sum((1 + s.basis.rho) * s.a**2)))
        l2 = float(np.linalg.norm(s.bdot))
        err = state_distance(s, target) if target is not None else float("nan")
        rows.append((float(t), h1, l2, err))
    return rows


def write_trace(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "||m||_H1w", "||dm||_L2w", "error_to_target"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
