"""Exception hierarchy shared across the package.

Every error raised deliberately by corrcast derives from CorrcastError so
callers (and the CLI exit-code mapping) can distinguish usage, data, and
numerical failures from genuine bugs.
"""
from __future__ import annotations


class CorrcastError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigError(CorrcastError):
    """Invalid configuration: unknown key, out-of-range parameter, bad flag."""


class DataError(CorrcastError):
    """Malformed or missing input data (bad file row, weather gap, ...)."""


class StateError(CorrcastError):
    """Pipeline state is internally inconsistent (missing carry-over values)."""


class DegenerateSimilarityError(CorrcastError):
    """A centered feature vector has (numerically) zero norm."""


class DegenerateGraphError(CorrcastError):
    """A constructed graph has an isolated node (degree below the floor)."""


class NumericalError(CorrcastError):
    """A numerical routine failed: singular system, non-finite values."""


class NonConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class TrainingError(NumericalError):
    """Forecaster training diverged; try a smaller learning rate."""
