"""Run configuration: a single YAML file validated against module contracts.

The file's top-level keys use the canonical parameter names (L, M, alpha1,
alpha2, T_h, T_f, R, k, lambda, p_c, p_m, E, slot_minutes) plus operational
defaults: seed, forecaster and solver choice, error scope, baseline knobs,
a ``scenario`` section for the synthetic generator, and a ``paths`` section
naming input files.  Unknown keys are rejected at load so typos never pass
silently, and every derived module configuration is constructed eagerly so
range violations surface as ConfigError before any work starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .errors import ConfigError
from .features import FeatureWeights
from .forecast import LstmConfig
from .graph import SimilarityParams
from .metrics import SCOPES
from .model import WindowConfig
from .pipeline import FORECASTER_KINDS, PipelineConfig
from .propagate import PropagationParams
from .simgen import ScenarioConfig
from .tune import GaConfig

SOLVER_KINDS = ("closed-form", "fixed-point")


@dataclass(frozen=True)
class InputPaths:
    """Input file locations; commands require the ones they consume."""

    readings: Optional[str] = None
    weather: Optional[str] = None
    sensors: Optional[str] = None
    pois: Optional[str] = None
    truth: Optional[str] = None
    predictions: Optional[str] = None
    beta: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of one run, named as in the configuration file."""

    l: int = 60
    m: int = 30
    alpha1: float = 20.0
    alpha2: float = 0.0
    t_h: int = 5
    t_f: int = 3
    r: int = 20
    k: int = 200
    lam: float = 0.3
    p_c: float = 0.6
    p_m: float = 0.05
    e: int = 500
    slot_minutes: float = 5.0
    wake_prob: float = 0.2
    population: int = 40
    hidden: int = 16
    seed: int = 0
    forecaster: str = "lstm"
    solver: str = "closed-form"
    error_scope: str = "current-subgraph"
    idw_power: float = 2.0
    time_scale: Optional[float] = None
    max_generations: int = 10_000
    history_limit: int = 64
    n_slots: int = 120
    noise_std: float = 1.0
    plume_count: int = 4
    drift_coupling: float = 15.0
    diffusion_rate: float = 0.4
    baseline: float = 10.0
    paths: InputPaths = field(default_factory=InputPaths)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Construct every derived module config so its invariants run."""
        try:
            self.window()
            self.similarity()
            self.propagation()
            self.ga()
            self.scenario()
            self.lstm()
        except (ValueError, ConfigError) as exc:
            raise ConfigError(str(exc)) from None
        if self.forecaster not in FORECASTER_KINDS:
            raise ConfigError(
                f"forecaster must be one of {FORECASTER_KINDS}, got {self.forecaster!r}"
            )
        if self.solver not in SOLVER_KINDS:
            raise ConfigError(
                f"solver must be one of {SOLVER_KINDS}, got {self.solver!r}"
            )
        if self.error_scope not in SCOPES:
            raise ConfigError(
                f"error_scope must be one of {SCOPES}, got {self.error_scope!r}"
            )
        if self.slot_minutes <= 0.0:
            raise ConfigError(f"slot_minutes must be positive, got {self.slot_minutes}")
        if self.idw_power <= 0.0:
            raise ConfigError(f"idw_power must be positive, got {self.idw_power}")
        if self.time_scale is not None and self.time_scale < 0.0:
            raise ConfigError(
                f"time_scale must be non-negative, got {self.time_scale}"
            )

    def window(self) -> WindowConfig:
        return WindowConfig(t_h=self.t_h, t_f=self.t_f, l=self.l)

    def similarity(self) -> SimilarityParams:
        return SimilarityParams(alpha1=self.alpha1, alpha2=self.alpha2, k=self.k)

    def propagation(self) -> PropagationParams:
        return PropagationParams(lam=self.lam)

    def lstm(self) -> LstmConfig:
        return LstmConfig(hidden_size=self.hidden, seed=self.seed)

    def ga(self) -> GaConfig:
        return GaConfig(
            population_size=self.population,
            crossover_prob=self.p_c,
            mutation_prob=self.p_m,
            stagnation_limit=self.e,
            bits_per_weight=self.r,
            seed=self.seed,
            max_generations=self.max_generations,
        )

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(
            l=self.l,
            m=self.m,
            n_slots=self.n_slots,
            wake_prob=self.wake_prob,
            noise_std=self.noise_std,
            plume_count=self.plume_count,
            drift_coupling=self.drift_coupling,
            diffusion_rate=self.diffusion_rate,
            baseline=self.baseline,
            seed=self.seed,
        )

    def pipeline(self, weights: Optional[FeatureWeights] = None) -> PipelineConfig:
        return PipelineConfig(
            window=self.window(),
            similarity=self.similarity(),
            propagation=self.propagation(),
            weights=weights if weights is not None else FeatureWeights.uniform(),
            forecaster=self.forecaster,
            lstm=self.lstm(),
            history_limit=max(self.history_limit, self.window().n_subgraphs),
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)


#: configuration file key -> RunConfig field
_TOP_KEYS = {
    "L": "l",
    "M": "m",
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "T_h": "t_h",
    "T_f": "t_f",
    "R": "r",
    "k": "k",
    "lambda": "lam",
    "p_c": "p_c",
    "p_m": "p_m",
    "E": "e",
    "slot_minutes": "slot_minutes",
    "wake_prob": "wake_prob",
    "P": "population",
    "H": "hidden",
    "seed": "seed",
    "forecaster": "forecaster",
    "solver": "solver",
    "error_scope": "error_scope",
    "idw_power": "idw_power",
    "time_scale": "time_scale",
    "max_generations": "max_generations",
    "history_limit": "history_limit",
}

_SCENARIO_KEYS = {
    "n_slots": "n_slots",
    "noise_std": "noise_std",
    "plume_count": "plume_count",
    "drift_coupling": "drift_coupling",
    "diffusion_rate": "diffusion_rate",
    "baseline": "baseline",
}

_PATH_KEYS = (
    "readings",
    "weather",
    "sensors",
    "pois",
    "truth",
    "predictions",
    "beta",
)

_INT_FIELDS = {
    "l", "m", "t_h", "t_f", "r", "k", "e", "population", "hidden",
    "seed", "max_generations", "history_limit", "n_slots", "plume_count",
}
_FLOAT_FIELDS = {
    "alpha1", "alpha2", "lam", "p_c", "p_m", "slot_minutes", "wake_prob",
    "idw_power", "time_scale", "noise_std", "drift_coupling",
    "diffusion_rate", "baseline",
}
_STR_FIELDS = {"forecaster", "solver", "error_scope"}


def _coerce(key: str, name: str, value):
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if name in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    raise AssertionError(f"unmapped field {name}")


def from_mapping(mapping: Mapping) -> RunConfig:
    """Build and validate a RunConfig from a parsed configuration mapping."""
    if not isinstance(mapping, Mapping):
        raise ConfigError(f"configuration must be a mapping, got {type(mapping).__name__}")
    fields = {}
    for key, value in mapping.items():
        if key == "scenario":
            if not isinstance(value, Mapping):
                raise ConfigError("scenario section must be a mapping")
            for sub, sub_value in value.items():
                if sub not in _SCENARIO_KEYS:
                    raise ConfigError(f"unknown configuration key scenario.{sub}")
                fields[_SCENARIO_KEYS[sub]] = _coerce(
                    f"scenario.{sub}", _SCENARIO_KEYS[sub], sub_value
                )
        elif key == "paths":
            if not isinstance(value, Mapping):
                raise ConfigError("paths section must be a mapping")
            entries = {}
            for sub, sub_value in value.items():
                if sub not in _PATH_KEYS:
                    raise ConfigError(f"unknown configuration key paths.{sub}")
                if not isinstance(sub_value, str):
                    raise ConfigError(f"paths.{sub} must be a string, got {sub_value!r}")
                entries[sub] = sub_value
            fields["paths"] = InputPaths(**entries)
        elif key in _TOP_KEYS:
            name = _TOP_KEYS[key]
            if name == "time_scale" and value is None:
                fields[name] = None
            else:
                fields[name] = _coerce(key, name, value)
        else:
            raise ConfigError(f"unknown configuration key {key}")
    return RunConfig(**fields)


def load(path: str | Path) -> RunConfig:
    """Load and validate the configuration file at `path`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        parsed = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if parsed is None:
        parsed = {}
    if not isinstance(parsed, Mapping):
        raise ConfigError(f"{path} must hold a key-value mapping at top level")
    return from_mapping(parsed)
