"""Offline contextual-bandit workbench: log replay, batch policy learning,
off-policy and fairness evaluation."""

__version__ = "0.1.0"
