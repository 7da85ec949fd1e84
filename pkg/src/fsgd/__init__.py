"""Streaming factor-augmented SGD: online subspace tracking plus SGD on
the estimated factors, with baselines, synthetic data generators, and
experiment plumbing. The sklearn-style entry points live here; the
functional core sits in the submodules."""

__version__ = "0.1.0"

from .estimators import FactorSGDRegressor, StreamingSubspace

__all__ = ["FactorSGDRegressor", "StreamingSubspace", "__version__"]
