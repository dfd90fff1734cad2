"""Variational toolkit for the critical Sobolev problem on the Heisenberg group H^1."""
from .bubbles import (BubbleTrack, PSSpec, RecoverySpec, dE_residual, energy_E_lambda, energy_E_star,
                      recovery_glued, recovery_pair, recovery_single, synth_ps_sequence, xn_approximation)
from .errors import ConvergenceError, ValidationError
from .extremals import BubbleSpec, bubble_field, estimate_Sstar, jerison_lee_value, normalized_bubble
from .grid import DomainMask, Field, Grid, load_field, pairing, quadrature_lp, save_field
from .group import GroupParams, GroupPoint, compose, dilate, gauge, inverse, scaled_translate
from .hdiff import dirichlet_energy, horizontal_gradient, solve_poisson, stiffness_matrix
from .measures import (EnergyMeasure, XPair, cca_check, concentration_report, detect_atoms, energy_density,
                       F_eps, gamma_limit_F, sstar_bound_check)
from .profiles import extract_profiles, rescale_field, separation_metric, splitting_report
from .subcrit import SubcritConfig, epsilon_sweep, holder_bound, solve_subcritical

__version__ = "0.1.0"

__all__ = [
    "BubbleSpec", "BubbleTrack", "ConvergenceError", "DomainMask", "EnergyMeasure", "F_eps", "Field",
    "Grid", "GroupParams", "GroupPoint", "PSSpec", "RecoverySpec", "SubcritConfig", "ValidationError",
    "XPair", "bubble_field", "cca_check", "compose", "concentration_report", "dE_residual", "detect_atoms",
    "dilate", "dirichlet_energy", "energy_E_lambda", "energy_E_star", "energy_density", "epsilon_sweep",
    "estimate_Sstar", "extract_profiles", "gamma_limit_F", "gauge", "holder_bound", "horizontal_gradient",
    "inverse", "jerison_lee_value", "load_field", "normalized_bubble", "pairing", "quadrature_lp",
    "recovery_glued", "recovery_pair", "recovery_single", "rescale_field", "save_field", "scaled_translate",
    "separation_metric", "solve_poisson", "solve_subcritical", "splitting_report", "sstar_bound_check",
    "stiffness_matrix", "synth_ps_sequence", "xn_approximation",
]
