"""Ground states, singular limit and Morse index of the cubic Gross-Pitaevskii
equation with a harmonic potential in the energy-supercritical regime."""

__version__ = "0.1.0"

from .model import ExponentPair, ProblemParams, kappa_exponents
from .ode_core import Event, Tolerances, Trajectory, integrate, refine_events, wronskian
from .shooting import (CurvePoint, GroundState, Regime, ShotClass, ShotKind, SingularState,
                       classify_regime, classify_shot, solve_lambda, solve_lambda_inf,
                       sweep_curve)

__all__ = [
    "__version__", "ExponentPair", "ProblemParams", "kappa_exponents", "Event", "Tolerances",
    "Trajectory", "integrate", "refine_events", "wronskian", "CurvePoint", "GroundState",
    "Regime", "ShotClass", "ShotKind", "SingularState", "classify_regime", "classify_shot",
    "solve_lambda", "solve_lambda_inf", "sweep_curve",
]
