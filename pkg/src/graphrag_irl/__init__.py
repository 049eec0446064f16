"""Graph-grounded listwise IRL ranking with LLM re-ranking."""

__version__ = "0.1.0"
