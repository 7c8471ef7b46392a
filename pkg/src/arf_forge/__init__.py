"""Synthetic observability benchmark forge and evaluation harness.

The package generates multivariate telemetry series with injected
anomalies, derives multiple-choice questions about them, renders plots,
runs models or reference baselines over the questions, and scores the
results with class-aware metrics.
"""

__version__ = "0.1.0"
