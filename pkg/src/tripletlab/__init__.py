"""Metric-learning losses for two-modality retrieval, with analytic gradients."""

__version__ = "0.1.0"
