import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralpde import ResolutionExceeded, UnsupportedError
from neuralpde.bilinear import (
    execute, execution_trace, steer_displacement, steer_full, steer_velocity, unit_state, write_trace,
)
from neuralpde.bilinear.steering import max_time_for
from neuralpde.hermite import HermiteBasis, HermiteState, free_evolution, state_distance

HB = HermiteBasis(1, 16)


def _landing(m0, v0, tau):
    return free_evolution(HermiteState(HB, m0, v0), tau).a


def test_displacement_single_mode():
    m0 = HB.unit(0)
    mT = 0.5 * HB.unit(0)
    tau, v0 = steer_displacement(m0, mT, 1.0, HB)
    np.testing.assert_allclose(_landing(m0, v0, tau), mT, atol=1e-12)
    assert 0 < tau < max_time_for(HB, m0, mT, 1.0)


def test_displacement_window_respects_highest_mode():
    m0 = HB.unit(0)
    mT = HB.unit(5)
    window = max_time_for(HB, m0, mT, 10.0)
    assert window == pytest.approx(np.pi / np.sqrt(HB.rho[5]))
    with pytest.raises(ValueError):
        steer_displacement(m0, mT, 10.0, HB, tau=window)


@settings(max_examples=10)
@given(st.integers(0, 2**31))
def test_displacement_random_pairs(seed):
    rng = np.random.default_rng(seed)
    m0 = np.zeros(HB.size)
    mT = np.zeros(HB.size)
    m0[:6] = rng.normal(size=6)
    mT[:6] = rng.normal(size=6)
    tau, v0 = steer_displacement(m0, mT, 2.0, HB)
    np.testing.assert_allclose(_landing(m0, v0, tau), mT, atol=1e-12)


def test_displacement_validation():
    with pytest.raises(ValueError):
        steer_displacement(np.zeros(3), np.zeros(HB.size), 1.0, HB)
    with pytest.raises(ValueError):
        steer_displacement(HB.unit(0), HB.unit(0), 0.0, HB)


def test_trivial_velocity_gives_empty_plan():
    s0 = unit_state(HB)
    plan = steer_velocity(s0, np.zeros(HB.size), 0.1, 1.0)
    assert plan.segments == [] and plan.meta.get("trivial")


def test_velocity_steering_reaches_tolerance():
    s0 = unit_state(HB)
    v = 0.3 * HB.unit(0) + 0.2 * HB.unit(2)
    plan = steer_velocity(s0, v, 0.1, 1.0)
    assert plan.duration <= 1.0
    assert state_distance(execute(plan, s0), HermiteState(HB, s0.a, v)) < 0.1


def test_velocity_needs_displacement():
    s0 = HermiteState(HB, np.zeros(HB.size), HB.unit(0))
    with pytest.raises(UnsupportedError):
        steer_velocity(s0, np.zeros(HB.size), 0.1, 1.0)


def test_velocity_resolution_exceeded():
    s0 = unit_state(HB)
    with pytest.raises(ResolutionExceeded) as info:
        steer_velocity(s0, HB.unit(11), 1e-3, 1.0, F_max=1, max_kicks=1)
    assert info.value.residual >= 5e-4


def test_full_steering_to_self_pads_with_free_flight():
    s0 = unit_state(HB)
    plan = steer_full(s0, s0, 0.1, 1.0)
    assert plan.duration == pytest.approx(1.0)
    assert all(seg.kind == "free" for seg in plan.segments)
    assert plan.error == 0.0


def test_full_steering_rejects_zero_state():
    z = HermiteState(HB, np.zeros(HB.size), np.zeros(HB.size))
    with pytest.raises(UnsupportedError):
        steer_full(z, unit_state(HB), 0.1, 1.0)


def test_trace_rows_and_header(tmp_path):
    s0 = unit_state(HB)
    plan = steer_full(s0, s0, 0.1, 1.0)
    rows = execution_trace(plan, s0, target=s0)
    assert rows[0][0] == 0.0 and rows[-1][0] == pytest.approx(1.0)
    assert all(r[3] < 1e-12 for r in rows)
    write_trace(rows, tmp_path / "trace.csv")
    with open(tmp_path / "trace.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["t", "||m||_H1w", "||dm||_L2w", "error_to_target"]
    assert len(data) == len(rows) + 1
