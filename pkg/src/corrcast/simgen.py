"""Synthetic scenario generator for exercising the streaming estimator.

Produces a fully known ground-truth field over a set of points of interest,
a weather series, and the sparse sensor readings a real deployment would
emit.  The field is a constant baseline plus a handful of Gaussian plumes
whose centres drift with the wind and whose widths grow over time, so the
data rewards spatial interpolation, temporal carry-over, and meteorological
features alike.

The generated scenarios satisfy two sanity properties by construction:

* smoothness: two points of interest within one plume width of each other
  differ in ground truth by less than 50 percent (relative to the larger
  value), because total plume amplitude is capped at twice the baseline;
* sparsity: each sensor reports independently per slot with the configured
  wake probability, so the expected fraction of labelled points of interest
  is ``wake_prob * m / l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import WEATHER_TYPES, WeatherRecord
from .model import Poi, Reading, Sensor

# Horizontal extent of the placement box in metres.
BOX_SIZE = 1000.0
# Vertical extent of the placement box in metres.
BOX_HEIGHT = 30.0
# Length scale of the vertical plume attenuation exp(-z / Z_ATTENUATION).
# Together with AMPLITUDE_CAP_RATIO this keeps the worst-case relative
# truth difference between points one plume width apart below 50 percent.
Z_ATTENUATION = 150.0
# Total plume amplitude is rescaled to at most this multiple of the baseline.
AMPLITUDE_CAP_RATIO = 2.0
# Raw per-plume amplitude range before the cap is applied.
AMPLITUDE_RANGE = (8.0, 20.0)
# Initial plume width range in metres.
WIDTH_RANGE = (180.0, 320.0)
# Bounds and per-slot step scales of the weather random walk.
WIND_SPEED_BOUNDS = (0.5, 8.0)
WIND_SPEED_STEP = 0.3
WIND_DIR_STEP_DEG = 15.0
TEMPERATURE_BOUNDS = (5.0, 35.0)
TEMPERATURE_STEP = 0.4
HUMIDITY_BOUNDS = (20.0, 95.0)
HUMIDITY_STEP = 1.5
# Probability that the categorical weather type repeats from one slot to
# the next.
WEATHER_STICKINESS = 0.9


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the synthetic world.

    ``l`` points of interest are placed uniformly at random in a box and
    ``m`` of them carry sensors.  Per slot each sensor wakes independently
    with probability ``wake_prob`` and reports the local ground truth plus
    Gaussian noise, clamped at zero.
    """

    l: int = 60
    m: int = 30
    n_slots: int = 120
    wake_prob: float = 0.2
    noise_std: float = 1.0
    plume_count: int = 4
    drift_coupling: float = 15.0
    diffusion_rate: float = 0.4
    baseline: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.l < 1:
            raise ValueError(f"l must be at least 1, got {self.l}")
        if not 0 <= self.m <= self.l:
            raise ValueError(f"m must lie in [0, l={self.l}], got {self.m}")
        if self.n_slots < 1:
            raise ValueError(f"n_slots must be at least 1, got {self.n_slots}")
        if not 0.0 < self.wake_prob <= 1.0:
            raise ValueError(
                f"wake_prob must lie in (0, 1], got {self.wake_prob}"
            )
        if self.noise_std < 0.0:
            raise ValueError(
                f"noise_std must be non-negative, got {self.noise_std}"
            )
        if self.plume_count < 0:
            raise ValueError(
                f"plume_count must be non-negative, got {self.plume_count}"
            )
        if self.diffusion_rate < 0.0:
            raise ValueError(
                f"diffusion_rate must be non-negative, got {self.diffusion_rate}"
            )
        if self.drift_coupling < 0.0:
            raise ValueError(
                f"drift_coupling must be non-negative, got {self.drift_coupling}"
            )
        if self.baseline <= 0.0:
            raise ValueError(
                f"baseline must be positive, got {self.baseline}"
            )
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class Scenario:
    """One generated world: geometry, weather, ground truth, and readings."""

    config: ScenarioConfig
    pois: tuple[Poi, ...]
    sensors: tuple[Sensor, ...]
    weather: tuple[WeatherRecord, ...]
    truth: np.ndarray
    readings: tuple[Reading, ...]

    def truth_by_slot(self) -> dict[int, np.ndarray]:
        """Ground truth as a slot-indexed mapping of per-point rows."""
        return {slot: self.truth[slot] for slot in range(self.truth.shape[0])}

    def readings_for_slot(self, slot: int) -> list[Reading]:
        return [r for r in self.readings if r.slot == slot]


def expected_sparsity(config: ScenarioConfig) -> float:
    """Expected fraction of points of interest labelled in any one slot."""
    return config.wake_prob * config.m / config.l


def _fold(value: float, lo: float, hi: float) -> float:
    # Reflect a walk step back into [lo, hi] (triangle fold).
    span = hi - lo
    offset = (value - lo) % (2.0 * span)
    return lo + (offset if offset <= span else 2.0 * span - offset)


def _generate_weather(config: ScenarioConfig, rng: np.random.Generator) -> tuple[WeatherRecord, ...]:
    weather_type = int(rng.integers(0, WEATHER_TYPES))
    speed = float(rng.uniform(1.0, 4.0))
    direction = float(rng.uniform(0.0, 360.0))
    temperature = float(rng.uniform(10.0, 25.0))
    humidity = float(rng.uniform(40.0, 70.0))
    records = []
    for slot in range(config.n_slots):
        records.append(
            WeatherRecord(
                slot=slot,
                weather_type=weather_type,
                wind_speed=speed,
                wind_dir_deg=direction,
                temperature_c=temperature,
                humidity_pct=humidity,
            )
        )
        if rng.random() >= WEATHER_STICKINESS:
            others = [t for t in range(WEATHER_TYPES) if t != weather_type]
            weather_type = int(others[rng.integers(0, len(others))])
        speed = _fold(speed + rng.normal(0.0, WIND_SPEED_STEP), *WIND_SPEED_BOUNDS)
        direction = (direction + rng.normal(0.0, WIND_DIR_STEP_DEG)) % 360.0
        temperature = _fold(
            temperature + rng.normal(0.0, TEMPERATURE_STEP), *TEMPERATURE_BOUNDS
        )
        humidity = _fold(humidity + rng.normal(0.0, HUMIDITY_STEP), *HUMIDITY_BOUNDS)
    return tuple(records)


def _generate_truth(
    config: ScenarioConfig,
    pois: tuple[Poi, ...],
    weather: tuple[WeatherRecord, ...],
    rng: np.random.Generator,
) -> np.ndarray:
    xy = np.array([[p.x, p.y] for p in pois])
    vertical = np.exp(-np.array([p.z for p in pois]) / Z_ATTENUATION)

    amplitudes = rng.uniform(*AMPLITUDE_RANGE, size=config.plume_count)
    cap = AMPLITUDE_CAP_RATIO * config.baseline
    total = amplitudes.sum()
    if total > cap:
        # The cap bounds the worst-case relative difference between nearby
        # points regardless of how plumes overlap.
        amplitudes *= cap / total
    widths = rng.uniform(*WIDTH_RANGE, size=config.plume_count)
    centers = rng.uniform(0.0, BOX_SIZE, size=(config.plume_count, 2))

    truth = np.empty((config.n_slots, config.l))
    for slot in range(config.n_slots):
        values = np.full(config.l, config.baseline)
        sigma = widths + config.diffusion_rate * slot
        for p in range(config.plume_count):
            d2 = ((xy - centers[p]) ** 2).sum(axis=1)
            values += amplitudes[p] * np.exp(-d2 / (2.0 * sigma[p] ** 2)) * vertical
        truth[slot] = values
        record = weather[slot]
        theta = math.radians(record.wind_dir_deg)
        step = config.drift_coupling * record.wind_speed
        drift = np.array([step * math.sin(theta), step * math.cos(theta)])
        for p in range(config.plume_count):
            centers[p, 0] = _fold(centers[p, 0] + drift[0], 0.0, BOX_SIZE)
            centers[p, 1] = _fold(centers[p, 1] + drift[1], 0.0, BOX_SIZE)
    return truth


def _generate_readings(
    config: ScenarioConfig,
    sensors: tuple[Sensor, ...],
    truth: np.ndarray,
    rng: np.random.Generator,
) -> tuple[Reading, ...]:
    readings = []
    for slot in range(config.n_slots):
        for sensor in sensors:
            awake = rng.random() < config.wake_prob
            noise = rng.normal(0.0, config.noise_std)
            if awake:
                value = max(truth[slot, sensor.poi_id] + noise, 0.0)
                readings.append(Reading(sensor.sensor_id, slot, value))
    return tuple(readings)


def generate(config: ScenarioConfig) -> Scenario:
    """Build a scenario deterministically from the configured seed.

    Geometry, weather, field dynamics, and sensor sampling each consume an
    independent stream derived from the seed, so changing one knob never
    perturbs the unrelated parts of the world.
    """
    geometry_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0)))
    weather_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    field_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    sampling_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 3)))

    pois = tuple(
        Poi(
            poi_id=i,
            x=float(geometry_rng.uniform(0.0, BOX_SIZE)),
            y=float(geometry_rng.uniform(0.0, BOX_SIZE)),
            z=float(geometry_rng.uniform(0.0, BOX_HEIGHT)),
        )
        for i in range(config.l)
    )
    instrumented = sorted(
        int(i) for i in geometry_rng.choice(config.l, size=config.m, replace=False)
    )
    sensors = tuple(
        Sensor(sensor_id=rank, poi_id=poi_id)
        for rank, poi_id in enumerate(instrumented)
    )

    weather = _generate_weather(config, weather_rng)
    truth = _generate_truth(config, pois, weather, field_rng)
    truth.setflags(write=False)
    readings = _generate_readings(config, sensors, truth, sampling_rng)
    return Scenario(
        config=config,
        pois=pois,
        sensors=sensors,
        weather=weather,
        truth=truth,
        readings=readings,
    )
