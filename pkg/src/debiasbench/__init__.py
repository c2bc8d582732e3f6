"""Benchmark toolkit for debiasing matrix-factorization recommenders."""

__version__ = "0.1.0"
