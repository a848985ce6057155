"""Federated-learning client selection with gradient-projection bandits."""

__version__ = "0.1.0"
