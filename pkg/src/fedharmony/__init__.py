"""Federated multi-label learning simulator with consensus-guided correlation alignment."""

__version__ = "0.1.0"
