"""Exact and approximate MAP inference in Bayesian networks."""

from .model import (BayesianNetwork, ImpossibleEvidenceError, ModelError, NetworkBuilder, Potential,
                    Variable, joint_probability, make_network)
from .elimination import (MAP, MPE, PR, eliminate, min_fill_order, order_width, push_q_last,
                          validate_map_order, width_study)
from .jointree import ExactScorer, build_jointree, score_all_neighbors
from .search import (SearchConfig, SearchResult, initialize, pure_hill_climb_restart,
                     stochastic_hill_climb, taboo_search)
from .bp import BpConfig, BpScorer, bp_marginal, bp_neighbor_ratios, bp_retracted_marginal, bp_run
from .netgen import ONE, TWO, GenSpec, generate, sample_evidence
from .formats import dumps_network, emit_network, loads_network, parse_network
from .oracle import brute_force_map, brute_force_mpe, brute_force_pr

__version__ = "0.1.0"

__all__ = [
    "BayesianNetwork", "ImpossibleEvidenceError", "ModelError", "NetworkBuilder", "Potential", "Variable",
    "joint_probability", "make_network",
    "MAP", "MPE", "PR", "eliminate", "min_fill_order", "order_width", "push_q_last", "validate_map_order",
    "width_study",
    "ExactScorer", "build_jointree", "score_all_neighbors",
    "SearchConfig", "SearchResult", "initialize", "pure_hill_climb_restart", "stochastic_hill_climb",
    "taboo_search",
    "BpConfig", "BpScorer", "bp_marginal", "bp_neighbor_ratios", "bp_retracted_marginal", "bp_run",
    "ONE", "TWO", "GenSpec", "generate", "sample_evidence",
    "dumps_network", "emit_network", "loads_network", "parse_network",
    "brute_force_map", "brute_force_mpe", "brute_force_pr",
]
