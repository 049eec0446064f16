"""Persona-prompted LLM re-ranking of the IRL shortlist."""

from .fusion import FusionCase, boost_only_gate, full_ordering, fuse, ranks_of, tune_alpha
from .parsing import PARSE_FAILURE, PROVIDER_ERROR, REPAIRED, RankedResponse, parse_ranking
from .prompt import PersonaPrompt, build_prompt
from .providers import ResponseCache, make_provider, query_many, query_provider

__all__ = [
    "FusionCase", "boost_only_gate", "full_ordering", "fuse", "ranks_of", "tune_alpha",
    "PARSE_FAILURE", "PROVIDER_ERROR", "REPAIRED", "RankedResponse", "parse_ranking",
    "PersonaPrompt", "build_prompt", "ResponseCache", "make_provider", "query_many", "query_provider",
]
