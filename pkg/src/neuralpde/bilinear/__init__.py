"""Bilinear control of the wave equation on a Hermite basis."""

from .absorption import absorb_nonlinearity, absorption_error, rk4_run, sigma_bar
from .controls import (
    ControlBasis, ControlLaw, WaveGalerkin, concatenate, control_field, galerkin_for,
    lipschitz_estimate, multiplication_matrix, phi, propagate,
)
from .steering import (
    choose_flight_time, execution_trace, fit_kick_sequence, fit_velocity, realize_sequence,
    steer_displacement, steer_full, steer_short, steer_velocity, write_trace,
)
from .synthesis import (
    Segment, SynthesisPlan, TrigPoly, build_plan, conjugated_pulse, decompose, execute,
    free_plan, identity_residuals, kick, kick_target, pulse, saturate_plan, unit_state,
)

__all__ = [
    "ControlBasis", "ControlLaw", "Segment", "SynthesisPlan", "TrigPoly", "WaveGalerkin",
    "absorb_nonlinearity", "absorption_error", "build_plan", "choose_flight_time", "concatenate",
    "conjugated_pulse", "control_field", "decompose", "execute", "execution_trace",
    "fit_kick_sequence", "fit_velocity", "free_plan", "galerkin_for", "identity_residuals", "kick",
    "kick_target", "lipschitz_estimate", "multiplication_matrix", "phi", "propagate", "pulse",
    "realize_sequence", "rk4_run", "saturate_plan", "sigma_bar", "steer_displacement",
    "steer_full", "steer_short", "steer_velocity", "unit_state", "write_trace",
]
