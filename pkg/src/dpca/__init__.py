"""Debiased one-shot distributed PCA under the spiked covariance model."""

from dpca.coordinator import estimate, fan_baseline, identify
from dpca.datagen import build_mixed_model, build_sparse_model, sample, to_correlation
from dpca.machine import LocalSummary, local_summary
from dpca.metrics import ar, rho

__all__ = [
    "LocalSummary",
    "ar",
    "build_mixed_model",
    "build_sparse_model",
    "estimate",
    "fan_baseline",
    "identify",
    "local_summary",
    "rho",
    "sample",
    "to_correlation",
]

__version__ = "0.1.0"
