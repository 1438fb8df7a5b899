"""Joint law of a first hitting time and the stopped state for 1-D elliptic SDEs,
by unbiased forward and backward parametrix Monte Carlo, with deterministic
low-order series terms, closed-form oracles and Euler baselines.
"""
from .coefficients import BUILTIN_MODELS, CoefficientSet, build_model, validate
from .engine import EstimateResult, EstimateSummary
from .estimator_backward import (
    estimate_density_D_bw,
    estimate_density_K_bw,
    estimate_dx,
    estimate_functional_bw,
)
from .estimator_forward import (
    estimate_atom,
    estimate_density_D,
    estimate_density_K,
    estimate_functional,
    estimate_ibp,
)
from .oracles import DriftedBMOracle, LampertiOracle, baseline_bridge_euler, baseline_discrete_euler
from .payoffs import build_payoff
from .series_quadrature import SeriesTerm, log_truncation_bound, term_backward, term_forward, truncation_bound

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_MODELS", "CoefficientSet", "build_model", "validate", "EstimateResult", "EstimateSummary",
    "estimate_functional", "estimate_density_K", "estimate_density_D", "estimate_atom", "estimate_ibp",
    "estimate_functional_bw", "estimate_density_K_bw", "estimate_density_D_bw", "estimate_dx",
    "DriftedBMOracle", "LampertiOracle", "baseline_discrete_euler", "baseline_bridge_euler", "build_payoff",
    "SeriesTerm", "term_forward", "term_backward", "truncation_bound", "log_truncation_bound",
]
