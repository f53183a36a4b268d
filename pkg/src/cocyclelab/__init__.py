"""Numerical laboratory for ergodic matrix Schrödinger cocycles."""

__version__ = "0.1.0"

from .closed_form import constant_exponents, free_gamma, free_ids, lloyd_gamma
from .drivers import (ConstantModel, IIDModel, OrbitSeed, QuasiPeriodicModel, almost_mathieu,
                      anderson_bernoulli, free_model, lloyd_model, orbit_potentials, validate_model)
from .lyapunov import LyapunovEstimate, doubling_check, ldp_tail, lyapunov_spectra, lyapunov_spectrum
from .symplectic import LagrangianFrame, ValidationError, build_transfer, wedge_logsum

__all__ = [
    "ConstantModel", "IIDModel", "LagrangianFrame", "LyapunovEstimate", "OrbitSeed",
    "QuasiPeriodicModel", "ValidationError", "almost_mathieu", "anderson_bernoulli", "build_transfer",
    "constant_exponents", "doubling_check", "free_gamma", "free_ids", "free_model", "ldp_tail",
    "lloyd_gamma", "lloyd_model", "lyapunov_spectra", "lyapunov_spectrum", "orbit_potentials",
    "validate_model", "wedge_logsum",
]
