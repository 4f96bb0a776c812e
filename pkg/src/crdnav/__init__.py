"""Causal-representation-disentangled reinforcement learning for multi-UAV collision avoidance."""

__version__ = "0.1.0"
