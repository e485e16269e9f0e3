"""Mechanism-controlled multi-agent reinforcement learning: simulators, exact oracles and experiments."""

__version__ = "0.1.0"
