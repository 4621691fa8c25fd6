"""Node feature encoding and the adjusted-cosine similarity primitive.

Every node is described by a fixed-length vector combining where it is,
when it is, and what the weather was in its slot:

    index  0..2   x, y, z coordinates of the poi        (z-scored)
    index  3      slot index tau                        (z-scored)
    index  4..8   one-hot weather type (5 categories)   (pass-through)
    index  9      wind speed                            (z-scored)
    index 10..11  sin/cos of wind direction             (pass-through)
    index 12      temperature                           (z-scored)
    index 13      humidity                              (z-scored)

Scaling statistics are fitted once on a training window and then frozen;
one-hot and sin/cos entries are already bounded and are never rescaled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSimilarityError
from .model import Poi

FEATURE_LENGTH = 14
WEATHER_TYPES = 5
#: entry names in vector order, used by weight files and reports
FEATURE_NAMES = (
    "x",
    "y",
    "z",
    "tau",
    "weather_0",
    "weather_1",
    "weather_2",
    "weather_3",
    "weather_4",
    "wind_speed",
    "wind_dir_sin",
    "wind_dir_cos",
    "temperature_c",
    "humidity_pct",
)
#: positions that are z-scored; the rest pass through unscaled
SCALED_POSITIONS = (0, 1, 2, 3, 9, 12, 13)
#: norm floor below which a centered vector counts as degenerate
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class WeatherRecord:
    """Meteorology of one time slot, shared by every node in that slot."""

    slot: int
    weather_type: int
    wind_speed: float
    wind_dir_deg: float
    temperature_c: float
    humidity_pct: float

    def __post_init__(self) -> None:
        if not (0 <= self.weather_type < WEATHER_TYPES):
            raise ValueError(
                f"weather_type must be in [0, {WEATHER_TYPES}), got {self.weather_type}"
            )


@dataclass(frozen=True)
class FeatureWeights:
    """Simplex weights over the feature entries (one weight per entry)."""

    beta: tuple[float, ...]

    def __post_init__(self) -> None:
        arr = np.asarray(self.beta, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("beta must be a non-empty vector")
        if np.any(arr <= 0.0) or np.any(arr >= 1.0):
            raise ValueError("every beta entry must lie in (0, 1)")
        if abs(float(arr.sum()) - 1.0) > 1e-12:
            raise ValueError(f"beta must sum to 1, got {arr.sum()!r}")

    @classmethod
    def uniform(cls, k: int = FEATURE_LENGTH) -> "FeatureWeights":
        return cls(tuple([1.0 / k] * k))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)


@dataclass(frozen=True)
class NormStats:
    """Frozen per-entry z-scoring statistics (identity on pass-through entries)."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != FEATURE_LENGTH or len(self.std) != FEATURE_LENGTH:
            raise ValueError("stats must cover every feature entry")
        if any(s <= 0.0 for s in self.std):
            raise ValueError("std entries must be positive")

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(tuple([0.0] * FEATURE_LENGTH), tuple([1.0] * FEATURE_LENGTH))

    @classmethod
    def fit(cls, raw: np.ndarray) -> "NormStats":
        """Fit scaling statistics on a matrix of raw (unscaled) feature rows.

        Zero-variance entries get std 1 so they z-score to a constant instead
        of dividing by zero; pass-through entries keep identity statistics.
        """
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[1] != FEATURE_LENGTH or raw.shape[0] < 1:
            raise ValueError("need a non-empty (rows, FEATURE_LENGTH) matrix")
        mean = np.zeros(FEATURE_LENGTH)
        std = np.ones(FEATURE_LENGTH)
        cols = list(SCALED_POSITIONS)
        mean[cols] = raw[:, cols].mean(axis=0)
        observed = raw[:, cols].std(axis=0)
        std[cols] = np.where(observed > 0.0, observed, 1.0)
        return cls(tuple(mean), tuple(std))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.mean, dtype=float), np.asarray(self.std, dtype=float)


def encode_raw(poi: Poi, tau: int, weather: WeatherRecord) -> np.ndarray:
    """Unscaled feature vector of the node (slot tau, poi)."""
    vec = np.zeros(FEATURE_LENGTH)
    vec[0] = poi.x
    vec[1] = poi.y
    vec[2] = poi.z
    vec[3] = float(tau)
    vec[4 + weather.weather_type] = 1.0
    vec[9] = weather.wind_speed
    theta = math.radians(weather.wind_dir_deg)
    vec[10] = math.sin(theta)
    vec[11] = math.cos(theta)
    vec[12] = weather.temperature_c
    vec[13] = weather.humidity_pct
    return vec


def encode(poi: Poi, tau: int, weather: WeatherRecord, stats: NormStats) -> np.ndarray:
    """Feature vector of the node (slot tau, poi), z-scored by `stats`.

    The weather record must belong to the node's own slot.
    """
    if weather.slot != tau:
        raise ValueError(f"weather record is for slot {weather.slot}, node is in slot {tau}")
    mean, std = stats.as_arrays()
    return (encode_raw(poi, tau, weather) - mean) / std


def apply_weights(features: np.ndarray, weights: FeatureWeights) -> np.ndarray:
    """Entrywise product of a feature vector (or row matrix) with beta."""
    features = np.asarray(features, dtype=float)
    beta = weights.as_array()
    if features.shape[-1] != beta.size:
        raise ValueError(
            f"feature length {features.shape[-1]} does not match beta length {beta.size}"
        )
    return features * beta


def mean_feature(features: np.ndarray) -> np.ndarray:
    """Mean feature vector over all rows (the graph-wide reference point)."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("need at least one feature row")
    return features.mean(axis=0)


def adjusted_cosine(f_i: np.ndarray, f_j: np.ndarray, f_bar: np.ndarray) -> float:
    """Cosine of the angle between f_i and f_j after centering both on f_bar.

    Output is clamped into [-1, 1] against rounding.  A centered vector with
    norm below DEGENERATE_NORM has no direction, so the similarity is
    undefined and DegenerateSimilarityError is raised; callers that need a
    total function substitute 0 (no correlation either way).
    """
    ci = np.asarray(f_i, dtype=float) - np.asarray(f_bar, dtype=float)
    cj = np.asarray(f_j, dtype=float) - np.asarray(f_bar, dtype=float)
    ni = math.sqrt(float(np.dot(ci, ci)))
    nj = math.sqrt(float(np.dot(cj, cj)))
    if ni < DEGENERATE_NORM or nj < DEGENERATE_NORM:
        raise DegenerateSimilarityError(
            "centered feature vector has near-zero norm; similarity undefined"
        )
    m = float(np.dot(ci, cj)) / (ni * nj)
    return min(1.0, max(-1.0, m))
