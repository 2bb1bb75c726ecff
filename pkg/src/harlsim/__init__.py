"""Microscopic intersection simulator with a hierarchical adversarial RL scheduler."""

__version__ = "0.1.0"
