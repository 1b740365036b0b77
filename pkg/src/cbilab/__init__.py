"""Numerical toolkit for subcritical continuous-state branching processes with immigration."""

__version__ = "0.1.0"

from .ldp import RateFunction, Regime
from .levy import FiniteMixture, LevyMeasure, PointMass, StretchedExp, TemperedPowerLaw, Zero, measure_from_dict
from .mechanisms import Mechanisms
from .riccati import (
    RiccatiProfile,
    RiccatiSolution,
    explosion_time,
    integrated_log_mgf,
    limit_mgf,
    make_profile,
    resolvent_root,
    solve_A,
    transition_log_laplace,
)
from .simulate import PathBatch, PathConfig, simulate_batch

__all__ = [
    "FiniteMixture",
    "LevyMeasure",
    "Mechanisms",
    "PathBatch",
    "PathConfig",
    "PointMass",
    "RateFunction",
    "Regime",
    "RiccatiProfile",
    "RiccatiSolution",
    "StretchedExp",
    "TemperedPowerLaw",
    "Zero",
    "explosion_time",
    "integrated_log_mgf",
    "limit_mgf",
    "make_profile",
    "measure_from_dict",
    "resolvent_root",
    "simulate_batch",
    "solve_A",
    "transition_log_laplace",
]
