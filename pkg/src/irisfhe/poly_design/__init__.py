"""Folding and classification polynomial design."""
from .classifier import (ClassifierChain, FoldingSpec, cleaning_eps, cleaning_polynomial,
                         cleaning_steps, compose_classifier, folding_bound_check, max_deviation)
from .paterson_stockmeyer import (CountingBackend, EmulatorBackend, PSPlan, ScalarBackend,
                                  evaluate_chain, ps_eval_plan, ps_evaluate)
from .polynomial import (CHEBYSHEV, MONOMIAL, Polynomial, critical_points, extrema_on, fold_fixture,
                         load_fixture, max_abs_on)
from .remez import alternation_points, remez_two_interval
from .weighted_l2 import (WeightSpec, design_folding_poly, fold_target, gram, inner, l2_project,
                          orthonormal_basis, quadrature, unit_weight)

__all__ = [
    "ClassifierChain", "FoldingSpec", "cleaning_eps", "cleaning_polynomial", "cleaning_steps",
    "compose_classifier", "folding_bound_check", "max_deviation", "CountingBackend",
    "EmulatorBackend", "PSPlan", "ScalarBackend", "evaluate_chain", "ps_eval_plan", "ps_evaluate",
    "CHEBYSHEV", "MONOMIAL", "Polynomial", "critical_points", "extrema_on", "fold_fixture",
    "load_fixture", "max_abs_on",
    "alternation_points", "remez_two_interval", "WeightSpec", "design_folding_poly", "fold_target",
    "gram", "inner", "l2_project", "orthonormal_basis", "quadrature", "unit_weight",
]
