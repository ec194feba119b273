"""Disentangled shared/exclusive representations via mutual information estimation."""

__version__ = "0.1.0"
