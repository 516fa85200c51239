"""Regime-switching LQ control on a random horizon, with a mean-variance hedging layer."""
from .control import FeedbackPolicy, build_policy, optimal_value
from .model import AssumptionCase, NoCertifiedCase, RegimeModel, classify_case, validate
from .riccati import JumpSolution, RiccatiSolution, decompose, solve_pbm
from .simulate import CostEstimate, estimate_cost, simulate_path

__all__ = [
    "AssumptionCase",
    "CostEstimate",
    "FeedbackPolicy",
    "JumpSolution",
    "NoCertifiedCase",
    "RegimeModel",
    "RiccatiSolution",
    "build_policy",
    "classify_case",
    "decompose",
    "estimate_cost",
    "optimal_value",
    "simulate_path",
    "solve_pbm",
    "validate",
]
