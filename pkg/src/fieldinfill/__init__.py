"""Adaptive infill sampling for scalar and field surrogates.

Gaussian-process scalar surrogates, POD and message-passing field
surrogates, coupled infill criteria, campaign orchestration and
surrogate-based uncertainty propagation.
"""

from .acquisition import CriterionKind, CriterionSpec, DeConfig, differential_evolution, jsd_gaussians, propose_infill
from .benchmarks import evaluate_p1, evaluate_p2, get_problem, integrate_field
from .campaign import CampaignConfig, CampaignState, load_state, metrics, run_campaign, save_state
from .gp import GpModel, GpSearch, PredictiveGaussian
from .sampling import InputSpace, Marginal, halton_sequence, mack_nfactor, mack_transform, sobol_sequence
from .uqprop import export_report, propagate

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig",
    "CampaignState",
    "CriterionKind",
    "CriterionSpec",
    "DeConfig",
    "GpModel",
    "GpSearch",
    "InputSpace",
    "Marginal",
    "PredictiveGaussian",
    "differential_evolution",
    "evaluate_p1",
    "evaluate_p2",
    "export_report",
    "get_problem",
    "halton_sequence",
    "integrate_field",
    "jsd_gaussians",
    "load_state",
    "mack_nfactor",
    "mack_transform",
    "metrics",
    "propagate",
    "propose_infill",
    "run_campaign",
    "save_state",
    "sobol_sequence",
]
