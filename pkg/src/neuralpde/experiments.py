"""Experiment runners used by the command line.

Each runner takes a validated config dictionary, a seed and an output
directory, writes its artifacts there and returns ``(header, rows,
metrics, artifacts)``; ``rows`` become ``result.csv``.
"""

import os

import numpy as np

from .adjoint import gradcheck
from .grid import make_grid
from .hermite import HermiteBasis, HermiteState, free_evolution, state_distance, state_norm, wave_energy
from .io import save_fields, write_fields_csv, write_trajectory_csv
from .optimize import ConstraintBox, TrainConfig, initial_coefficients, train
from .parabolic import CoefficientFields, ParabolicProblem, solve_forward
from .stencil import CoefficientSlice, assemble_kdelta, consistency_order

EXPERIMENTS = (
    "train-parabolic", "gradcheck", "stencil-convergence", "wave-free",
    "wave-steer", "wave-velocity", "saturate-plan", "absorb-nonlinear",
)

_GRID = {"dim": 1, "L": 3.0, "n_half": 30}
_BOX = {"A": 2.0, "b": 0.01, "B": 1.0, "C": 1.0, "D": 1.0}
_BASIS = {"dim": 1, "n_max": 16}

DEFAULTS = {
    "train-parabolic": {
        "grid": dict(_GRID), "T": 1.0, "nt": 40, "sigma": "zero", "box": dict(_BOX),
        "initial": {"alpha": 0.0, "beta": 0.01, "gamma": 1.0, "theta": 0.0},
        "task": {"width": 4.0, "center": 0.0, "shift": 0.3},
        "train": {"max_iters": 200, "step_init": 1.0, "free": ["alpha"], "spatially_constant": False,
                  "smoothness": 0.0},
    },
    "gradcheck": {
        "grid": {"dim": 1, "L": 3.0, "n_half": 20}, "T": 1.0, "nt": 40, "sigma": "zero",
        "n_probes": 20, "fd_step": 1e-3, "fd_order": 4,
        "coefficients": {"alpha": 0.3, "beta": 1.0, "gamma": 0.5, "theta": 0.2, "noise": 0.1},
        "task": {"shift": 0.3},
    },
    "stencil-convergence": {"dims": [1, 2], "L": 2.0, "resolutions": [8, 16, 32, 64]},
    "wave-free": {"basis": dict(_BASIS), "t_max": 10.0, "n_times": 11, "decay": 0.5},
    "wave-steer": {
        "basis": dict(_BASIS), "eps": 0.25, "T": 5.0, "exact_duration": True, "prefix": None,
        "initial": {"a": {0: 1.0}, "bdot": {}}, "target": {"a": {1: 1.0}, "bdot": {}},
    },
    "wave-velocity": {
        "basis": dict(_BASIS), "eps": 0.2, "T": 2.0, "F_max": 4, "max_kicks": 4,
        "initial": {"a": {0: 1.0, 1: 0.5}, "bdot": {}}, "velocity": {1: 1.0},
    },
    "saturate-plan": {
        "basis": dict(_BASIS), "eps": 0.1, "T_budget": 1.0,
        "psi": {"const": 0.0, "terms": [[2, 1.0, 0.0]]},
        "state": {"a": {0: 1.0}, "bdot": {}}, "audit_points": 100,
    },
    "absorb-nonlinear": {
        "basis": dict(_BASIS), "sigma": "tanh", "dt": 0.01,
        "law": [[0.5, 0.5, 0.2, -0.3], [0.7, 0.0, 0.0, 0.0], [0.3, 1.0, -0.5, 0.4]],
        "initial": {"a": {0: 1.0}, "bdot": {}},
    },
}


def _r(x):
    return repr(float(x))


# -- parabolic side ---------------------------------------------------------------


def _grid(cfg):
    g = cfg["grid"]
    return make_grid(g["dim"], g["L"], g["n_half"])


def _bump(grid, width, center):
    r2 = sum((c - center) ** 2 for c in grid.mesh())
    return np.exp(-width * r2)


def run_train(cfg, seed, out):
    grid = _grid(cfg)
    box = ConstraintBox(**cfg["box"])
    init = cfg["initial"]
    coeffs = initial_coefficients(grid, cfg["nt"], box)
    for name in ("alpha", "beta", "gamma", "theta"):
        if init.get(name) is not None:
            ref = CoefficientFields.constant(grid, cfg["nt"], **{name: init[name]})
            setattr(coeffs, name, getattr(ref, name))
    task = cfg["task"]
    m0 = _bump(grid, task["width"], task["center"])
    mT = _bump(grid, task["width"], task["center"] + task["shift"])
    p = ParabolicProblem(grid, cfg["T"], cfg["nt"], coeffs, m0, sigma=cfg["sigma"])
    t = cfg["train"]
    tc = TrainConfig(max_iters=t["max_iters"], step_init=t["step_init"], seed=seed,
                     free=tuple(t["free"]), spatially_constant=t["spatially_constant"],
                     smoothness=t["smoothness"])
    res = train(p, [(m0, mT)], box, tc)
    res.write_history(os.path.join(out, "history.csv"))
    traj = solve_forward(p.with_coeffs(res.coeffs))
    save_fields(os.path.join(out, "coefficients.npde"), res.coeffs)
    write_fields_csv(os.path.join(out, "coefficients.csv"), res.coeffs, grid)
    save_fields(os.path.join(out, "trajectory.npde"), traj)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), traj, grid)
    losses = res.losses
    metrics = {
        "initial_loss": losses[0], "final_loss": losses[-1],
        "reduction": 1 - losses[-1] / losses[0] if losses[0] > 0 else 0.0,
        "monotone": all(a >= b for a, b in zip(losses, losses[1:])),
        "feasible": box.contains(res.coeffs), "iterations": res.n_iter, "status": res.status,
    }
    rows = [[it, _r(loss), _r(step), _r(g)] for it, loss, step, g in res.history]
    arts = ["history.csv", "coefficients.npde", "coefficients.csv", "trajectory.npde", "trajectory.csv"]
    return ["iter", "loss", "step", "grad_norm"], rows, metrics, arts


def run_gradcheck(cfg, seed, out):
    grid = _grid(cfg)
    c = cfg["coefficients"]
    rng = np.random.default_rng(seed)
    coeffs = CoefficientFields.constant(grid, cfg["nt"], alpha=c["alpha"], beta=c["beta"],
                                        gamma=c["gamma"], theta=c["theta"])
    coeffs.alpha += c["noise"] * rng.standard_normal(coeffs.alpha.shape)
    coeffs.beta += c["noise"] * np.abs(rng.standard_normal(coeffs.beta.shape))
    if grid.dim == 2:
        coeffs.beta[:, 0, 1] = coeffs.beta[:, 1, 0]
    coeffs.gamma += c["noise"] * rng.standard_normal(coeffs.gamma.shape)
    m0 = _bump(grid, 1.0, 0.0)
    mT = _bump(grid, 1.0, cfg["task"]["shift"])
    p = ParabolicProblem(grid, cfg["T"], cfg["nt"], coeffs, m0, sigma=cfg["sigma"])
    rep = gradcheck(p, mT, cfg["n_probes"], cfg["fd_step"], seed=seed, fd_order=cfg["fd_order"])
    rep.to_csv(os.path.join(out, "gradcheck.csv"))
    rows = [[i, _r(a), _r(b), _r(e)] for i, a, b, e in rep.rows]
    return (["probe", "dir_deriv_adjoint", "dir_deriv_fd", "rel_err"], rows,
            {"max_rel_err": rep.max_rel_err}, ["gradcheck.csv"])


def smooth_stencil_case(dim):
    """Variable coefficients, a smooth field and its exact non-divergence image."""

    def builder(grid):
        X = grid.mesh()
        if dim == 1:
            (x,) = X
            c = CoefficientSlice(np.array([0.5 + 0.2 * np.sin(x)]), np.array([[1 + 0.5 * np.cos(x) ** 2]]),
                                 0.3 * x)
        else:
            x1, x2 = X
            b12 = 0.2 * np.sin(x1 + x2)
            beta = np.array([[1 + 0.3 * np.cos(x1), b12], [b12, 1 + 0.3 * np.sin(x2)]])
            c = CoefficientSlice(np.array([0.4 * np.cos(x2), -0.3 * np.sin(x1)]), beta, 0.5 * x1 * x2)
        return assemble_kdelta(c, grid)

    def reference(grid):
        X = grid.mesh()
        if dim == 1:
            (x,) = X
            y = np.sin(x)
            exact = 0.3 * x * y + (0.5 + 0.2 * np.sin(x)) * np.cos(x) - (1 + 0.5 * np.cos(x) ** 2) * np.sin(x)
            return y, exact
        x1, x2 = X
        s1, c1 = np.sin(x1), np.cos(x1)
        s2, c2 = np.sin(0.5 * x2), np.cos(0.5 * x2)
        y = s1 * c2
        y1, y2 = c1 * c2, -0.5 * s1 * s2
        y11, y22, y12 = -s1 * c2, -0.25 * s1 * c2, -0.5 * c1 * s2
        exact = (0.5 * x1 * x2 * y + 0.4 * np.cos(x2) * y1 - 0.3 * np.sin(x1) * y2
                 + (1 + 0.3 * np.cos(x1)) * y11 + (1 + 0.3 * np.sin(x2)) * y22
                 + 2 * 0.2 * np.sin(x1 + x2) * y12)
        return y, exact

    return builder, reference


def run_stencil(cfg, seed, out):
    rows, metrics = [], {}
    for dim in cfg["dims"]:
        builder, reference = smooth_stencil_case(dim)
        res = consistency_order(builder, reference, cfg["resolutions"], dim=dim, L=cfg["L"])
        metrics[f"order_{dim}d"] = res.order
        for n, h, e in zip(cfg["resolutions"], res.hs, res.errors):
            rows.append([dim, n, _r(h), _r(e), _r(res.order)])
    return ["dim", "n_half", "h", "max_error", "order"], rows, metrics, []


# -- wave side ----------------------------------------------------------------------


def _basis(cfg):
    return HermiteBasis(cfg["basis"]["dim"], cfg["basis"]["n_max"])


def _modes(hb, spec):
    out = np.zeros(hb.size)
    for key, val in (spec or {}).items():
        idx = tuple(int(k) for k in str(key).split(","))
        out[hb.position(idx)] += float(val)
    return out


def _state(hb, spec):
    return HermiteState(hb, _modes(hb, spec.get("a")), _modes(hb, spec.get("bdot")))


def run_wave_free(cfg, seed, out):
    hb = _basis(cfg)
    rng = np.random.default_rng(seed)
    decay = np.exp(-cfg["decay"] * hb.indices.sum(axis=1))
    s0 = HermiteState(hb, rng.standard_normal(hb.size) * decay, rng.standard_normal(hb.size) * decay)
    e0 = wave_energy(s0)
    rows, worst_drift, worst_group = [], 0.0, 0.0
    for t in np.linspace(0.0, cfg["t_max"], cfg["n_times"]):
        st = free_evolution(s0, t)
        drift = abs(wave_energy(st) - e0) / e0
        group = state_distance(free_evolution(free_evolution(s0, 0.5 * t), 0.5 * t), st) / max(1.0, state_norm(st))
        worst_drift, worst_group = max(worst_drift, drift), max(worst_group, group)
        rows.append([_r(t), _r(wave_energy(st)), _r(drift), _r(group)])
    return (["t", "energy", "drift", "group_error"], rows,
            {"max_drift": worst_drift, "max_group_error": worst_group}, [])


def _trace_result(plan, s0, target, out, name="plan.txt"):
    from .bilinear.steering import execution_trace, write_trace

    with open(os.path.join(out, name), "w") as fh:
        fh.write(plan.to_text())
    rows = execution_trace(plan, s0, target)
    write_trace(rows, os.path.join(out, "trace.csv"))
    return (["t", "||m||_H1w", "||dm||_L2w", "error_to_target"],
            [[_r(v) for v in r] for r in rows], [name, "trace.csv"])


def run_wave_steer(cfg, seed, out):
    from .bilinear.steering import steer_full
    from .bilinear.synthesis import execute

    hb = _basis(cfg)
    s0, sT = _state(hb, cfg["initial"]), _state(hb, cfg["target"])
    plan = steer_full(s0, sT, cfg["eps"], cfg["T"], exact_duration=cfg["exact_duration"], prefix=cfg["prefix"])
    final = execute(plan, s0) if plan.segments else s0
    header, rows, arts = _trace_result(plan, s0, sT, out)
    err = state_distance(final, sT)
    metrics = {"error": err, "passed": err < cfg["eps"], "duration": plan.duration, "n_pulses": plan.n_pulses}
    return header, rows, metrics, arts


def run_wave_velocity(cfg, seed, out):
    from .bilinear.steering import steer_velocity
    from .bilinear.synthesis import execute

    hb = _basis(cfg)
    s0 = _state(hb, cfg["initial"])
    v = _modes(hb, cfg["velocity"])
    plan = steer_velocity(s0, v, cfg["eps"], cfg["T"], F_max=cfg["F_max"], max_kicks=cfg["max_kicks"])
    goal = HermiteState(hb, s0.a, v)
    final = execute(plan, s0) if plan.segments else s0
    header, rows, arts = _trace_result(plan, s0, goal, out)
    err = state_distance(final, goal)
    metrics = {"error": err, "passed": err < cfg["eps"], "duration": plan.duration,
               "n_pulses": plan.n_pulses, "n_kicks": plan.meta.get("n_kicks", 1)}
    return header, rows, metrics, arts


def _trigpoly(dim, spec):
    from .bilinear.synthesis import TrigPoly

    psi = TrigPoly(dim, float(spec.get("const", 0.0)))
    for term in spec.get("terms", []):
        if len(term) != dim + 2:
            raise ValueError(f"term {term} needs {dim} frequency entries and two coefficients")
        psi.add_term(tuple(int(k) for k in term[:dim]), float(term[dim]), float(term[dim + 1]))
    return psi


def run_saturate(cfg, seed, out):
    from .bilinear.synthesis import execute, identity_residuals, kick_target, saturate_plan

    hb = _basis(cfg)
    psi = _trigpoly(hb.dim, cfg["psi"])
    state = _state(hb, cfg["state"])
    plan = saturate_plan(psi, cfg["eps"], cfg["T_budget"], state=state)
    target = kick_target(state, psi)
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-np.pi, np.pi, (2, cfg["audit_points"]))
    audit = float(np.max(np.abs(identity_residuals(a, b))))
    header, rows, arts = _trace_result(plan, state, target, out)
    final = execute(plan, state) if plan.segments else state
    err = state_distance(final, target)
    metrics = {"error": err, "passed": err < cfg["eps"], "duration": plan.duration,
               "n_segments": len(plan.segments), "level": psi.level, "identity_residual": audit}
    return header, rows, metrics, arts


def run_absorb(cfg, seed, out):
    from .bilinear.absorption import absorption_error
    from .bilinear.controls import ControlLaw

    hb = _basis(cfg)
    s0 = _state(hb, cfg["initial"])
    law = np.asarray(cfg["law"], dtype=float)
    if law.ndim != 2 or law.shape[1] != 2 * hb.dim + 2:
        raise ValueError(f"law rows need a duration and {2 * hb.dim + 1} control values")
    ctrl = ControlLaw(law[:, 0], law[:, 1:])
    err, lin, nonlin = absorption_error(s0, ctrl, cfg["sigma"], cfg["dt"])
    rows = []
    for t, a, b in zip(lin.times, lin.states, nonlin.states):
        rows.append([_r(t), _r(np.linalg.norm(a.a)), _r(np.max(np.abs(a.a - b.a)))])
    return (["t", "||a_linear||", "max_coeff_gap"], rows,
            {"sup_error": err, "n_steps": len(lin.times) - 1}, [])


RUNNERS = {
    "train-parabolic": run_train, "gradcheck": run_gradcheck, "stencil-convergence": run_stencil,
    "wave-free": run_wave_free, "wave-steer": run_wave_steer, "wave-velocity": run_wave_velocity,
    "saturate-plan": run_saturate, "absorb-nonlinear": run_absorb,
}
