"""Plasticity injection and competing interventions for dense networks."""

__version__ = "0.1.0"
