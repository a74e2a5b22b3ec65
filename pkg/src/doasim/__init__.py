"""Depth-of-anesthesia closed-loop simulation: propofol PK/PD plant, PID /
fractional PID / fuzzy fractional PID controllers and WOA tuning."""

__version__ = "0.1.0"

from ._jit import JIT_ENABLED, backend
from .control import Controller, ControllerConfig, control_step, decode_agent, reset_controller
from .errors import ConfigError, DegenerateProfileError, DoaSimError, InvalidArgumentError, NumericBlowupError
from .fracops import FracOperator, gl_coefficients
from .fuzzy import FuzzyGains, MembershipSet, MfGeometry, RuleBase, decode_mf, encode_mf, infer, membership
from .pkpd import (TABLE1_PATIENTS, PatientProfile, PdParams, PkCoefficients, PlantState, bis_of, compute_lbm,
                   compute_pk, plant_derivatives, step_plant)
from .simloop import CohortResult, Disturbance, Metrics, SimConfig, SimReport, compute_metrics, run_cohort, run_sim
from .woa import WoaConfig, WoaResult, optimize, tune_controller

__all__ = [
    "JIT_ENABLED", "backend",
    "Controller", "ControllerConfig", "control_step", "decode_agent", "reset_controller",
    "ConfigError", "DegenerateProfileError", "DoaSimError", "InvalidArgumentError", "NumericBlowupError",
    "FracOperator", "gl_coefficients",
    "FuzzyGains", "MembershipSet", "MfGeometry", "RuleBase", "decode_mf", "encode_mf", "infer", "membership",
    "TABLE1_PATIENTS", "PatientProfile", "PdParams", "PkCoefficients", "PlantState", "bis_of", "compute_lbm",
    "compute_pk", "plant_derivatives", "step_plant",
    "CohortResult", "Disturbance", "Metrics", "SimConfig", "SimReport", "compute_metrics", "run_cohort", "run_sim",
    "WoaConfig", "WoaResult", "optimize", "tune_controller",
]
