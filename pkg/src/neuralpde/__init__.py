"""Neural PDEs: coefficient-controlled parabolic training and bilinear wave steering."""

from ._errors import BudgetExceeded, FormatError, NumericalFailure, ResolutionExceeded, UnsupportedError
from .estimator import HermiteTransformer, NeuralPDERegressor
from .grid import Grid, make_grid
from .hermite import HermiteBasis, HermiteState
from .io import load_fields, save_fields
from .optimize import ConstraintBox, TrainConfig, train
from .parabolic import CoefficientFields, ParabolicProblem, Trajectory, solve_forward

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded", "CoefficientFields", "ConstraintBox", "FormatError", "Grid", "HermiteBasis",
    "HermiteState", "HermiteTransformer", "NeuralPDERegressor", "NumericalFailure", "ParabolicProblem",
    "ResolutionExceeded", "TrainConfig", "Trajectory", "UnsupportedError", "__version__", "load_fields",
    "make_grid", "save_fields", "solve_forward", "train",
]
