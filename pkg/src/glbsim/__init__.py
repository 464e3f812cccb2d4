"""Simulator for federated generalized linear bandits with event-triggered sync."""

__version__ = "0.1.0"
