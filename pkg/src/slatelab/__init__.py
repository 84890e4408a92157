"""Truncated step-level GRPO with dense ternary judge rewards on a synthetic chain-search world."""

__version__ = "0.1.0"
