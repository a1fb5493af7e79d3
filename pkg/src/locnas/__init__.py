"""Locality-based self-supervised pretraining for controller-driven cell search."""

__version__ = "0.1.0"
