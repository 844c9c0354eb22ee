"""Optomechanical force-sensing model, spectrum synthesis and joint fitting."""
from . import analysis, estimator, model, synth
from .analysis import SensitivityPoint, sensitivity_on_resonance, sensitivity_spectrum
from .estimator import FitOptions, JointFitResult, fit_joint, initial_guess
from .model import (
    DriveConfig,
    MeasurementConfig,
    MechanicalOscillator,
    force_sensitivity,
    min_sensitivity,
    optimal_cooperativity,
    sql_sensitivity,
    uncertainty_bound,
)
from .synth import AnharmonicLadder, SynthConfig

__version__ = "0.1.0"
