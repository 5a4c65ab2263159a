"""Lifted generalized belief propagation for Markov logic networks."""

from .mln import (
    MLN, Domain, Predicate, Constraint, Literal, WeightedClause, GroundClause,
    MLNError, ParseError, OracleLimitError,
    parse_mln, mln_to_text, solve_csp, ground_formulas, ground_atoms,
    world_log_score, shatter_to_enf, is_enf,
)

__all__ = [
    "MLN", "Domain", "Predicate", "Constraint", "Literal", "WeightedClause",
    "GroundClause", "MLNError", "ParseError", "OracleLimitError",
    "parse_mln", "mln_to_text", "solve_csp", "ground_formulas", "ground_atoms",
    "world_log_score", "shatter_to_enf", "is_enf",
]
