"""One prediction round per slot: pre-estimate, rebuild the graph, solve.

The streaming engine keeps a window of t_h past slots, the current slot, and
t_f future slots.  Advancing from anchor t-1 to t drops the oldest subgraph
and appends one for slot t + t_f.  The pre-estimate Y for the new window is
assembled from three sources: averaged measurements where a node is labeled,
the previous prediction carried over for nodes that already existed, and a
coarse-mean forecast for every node of the newly added subgraph.  Solving
the propagation system on the rebuilt graph then yields the prediction F.

Steps are atomic: a failed round raises without touching the prior state,
which always remains usable.  Feature normalization statistics and the
feature weights are frozen at bootstrap; retraining the coarse forecaster
happens only on explicit request.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

import numpy as np

from .errors import ConfigError, DataError, StateError
from .features import (
    FeatureWeights,
    NormStats,
    WeatherRecord,
    encode,
    encode_raw,
)
from .forecast import (
    CoarseSeries,
    LstmConfig,
    LstmParams,
    coarse_means,
    forecast_next,
    lstm_train,
    persistence_forecast,
)
from .graph import CorrelationGraph, SimilarityParams, build_graph
from .model import (
    LabelStore,
    Poi,
    Prediction,
    Reading,
    Sensor,
    WindowConfig,
    carry_index,
    node_poi,
    node_slot,
    route_readings,
)
from .propagate import PropagationParams, solve_closed_form

logger = logging.getLogger(__name__)

FORECASTER_KINDS = ("lstm", "persistence")


@dataclass(frozen=True)
class PipelineConfig:
    """Frozen parameter bundle shared by every round of one stream."""

    window: WindowConfig
    similarity: SimilarityParams = SimilarityParams()
    propagation: PropagationParams = PropagationParams()
    weights: FeatureWeights = field(default_factory=FeatureWeights.uniform)
    forecaster: str = "lstm"
    lstm: LstmConfig = LstmConfig()
    history_limit: int = 64

    def __post_init__(self) -> None:
        if self.forecaster not in FORECASTER_KINDS:
            raise ConfigError(
                f"forecaster must be one of {FORECASTER_KINDS}, got {self.forecaster!r}"
            )
        if self.history_limit < self.window.n_subgraphs:
            raise ConfigError(
                "history_limit must cover at least one full window "
                f"({self.window.n_subgraphs} slots), got {self.history_limit}"
            )


@dataclass(frozen=True)
class Forecaster:
    """Handle for the coarse-mean predictor: trained LSTM or persistence."""

    kind: str
    params: Optional[LstmParams] = None

    def __post_init__(self) -> None:
        if self.kind not in FORECASTER_KINDS:
            raise ConfigError(f"unknown forecaster kind {self.kind!r}")
        if self.kind == "lstm" and self.params is None:
            raise ConfigError("lstm forecaster needs trained parameters")

    def predict_next(self, series: CoarseSeries) -> float:
        if self.kind == "lstm":
            return forecast_next(self.params, series)
        return persistence_forecast(series)


@dataclass(frozen=True)
class PipelineState:
    """Everything one stream carries from anchor t to anchor t + 1.

    `anchor` is the slot of the last completed round; `prev_prediction`
    covers the window at that anchor.  The label store holds measurement
    slots in [anchor - t_h, anchor], the weather map covers exactly the
    window's slot range, and the coarse series ends at anchor + t_f.
    """

    config: PipelineConfig
    pois: tuple[Poi, ...]
    sensors: dict[int, Sensor] = field(compare=False)
    stats: NormStats
    forecaster: Forecaster
    anchor: int
    prev_prediction: Prediction
    labels: LabelStore = field(compare=False)
    weather: dict[int, WeatherRecord] = field(compare=False)
    coarse: CoarseSeries
    prev_graph: Optional[CorrelationGraph] = field(default=None, compare=False)

    def check(self) -> None:
        """Raise StateError on any violated cross-field invariant."""
        window = self.config.window
        if len(self.pois) != window.l:
            raise StateError(
                f"{len(self.pois)} points of interest but window expects {window.l}"
            )
        for index, poi in enumerate(self.pois):
            if poi.poi_id != index:
                raise StateError("points of interest must be listed in id order 0..l-1")
        for sensor in self.sensors.values():
            if not (0 <= sensor.poi_id < window.l):
                raise StateError(
                    f"sensor {sensor.sensor_id} references unknown poi {sensor.poi_id}"
                )
        pred = self.prev_prediction
        if pred.anchor != self.anchor or pred.window != window:
            raise StateError("previous prediction does not cover the previous window")
        if pred.values.shape != (window.n_nodes,):
            raise StateError("previous prediction length does not match the window")
        if not np.all(np.isfinite(pred.values)):
            raise StateError("previous prediction contains non-finite values")
        for slot in self.labels.slots():
            if not (self.anchor - window.t_h <= slot <= self.anchor):
                raise StateError(f"label store holds out-of-window slot {slot}")
        for slot in window.slots(self.anchor):
            record = self.weather.get(slot)
            if record is None:
                raise StateError(f"weather missing for window slot {slot}")
            if record.slot != slot:
                raise StateError(f"weather record for slot {record.slot} filed under {slot}")
        if len(self.coarse) == 0:
            raise StateError("coarse series is empty")
        if self.coarse.last_slot() != self.anchor + window.t_f:
            raise StateError(
                f"coarse series ends at {self.coarse.last_slot()}, "
                f"expected {self.anchor + window.t_f}"
            )


@dataclass(frozen=True)
class PreEstimate:
    """Pre-estimate vector for one round plus the label bookkeeping behind it."""

    anchor: int
    y: np.ndarray = field(compare=False)
    label_mask: np.ndarray = field(compare=False)
    label_values: np.ndarray = field(compare=False)
    labels: LabelStore = field(compare=False)


def pre_estimate(state: PipelineState, new_readings: list[Reading],
                 mu_hat: float) -> PreEstimate:
    """Assemble Y for the round at anchor t = state.anchor + 1.

    Labeled nodes take their averaged measurement, previously existing
    unlabeled nodes carry the prior prediction forward, and every node of the
    newly added subgraph takes the coarse forecast mu_hat.
    """
    window = state.config.window
    t = state.anchor + 1
    prev = state.prev_prediction
    if prev.anchor != state.anchor or prev.window != window:
        raise StateError("previous prediction does not cover the previous window")
    if prev.values.shape != (window.n_nodes,):
        raise StateError("previous prediction length does not match the window")

    labels = state.labels.copy()
    route_readings(labels, new_readings, state.sensors, t, window)
    labels.prune(t - window.t_h)

    n = window.n_nodes
    y = np.zeros(n)
    label_mask = np.zeros(n, dtype=bool)
    label_values = np.zeros(n)
    by_slot = {slot: labels.labels_for_slot(slot) for slot in labels.slots()}
    for node in range(n):
        slot = node_slot(node, window, t)
        poi = node_poi(node, window)
        measured = by_slot.get(slot, {}).get(poi)
        if measured is not None:
            y[node] = measured
            label_mask[node] = True
            label_values[node] = measured
            continue
        carried = carry_index(node, window)
        if carried is None:
            y[node] = mu_hat
        else:
            y[node] = prev.values[carried]
    return PreEstimate(anchor=t, y=y, label_mask=label_mask,
                       label_values=label_values, labels=labels)


def _feature_rows(pois: tuple[Poi, ...], window: WindowConfig, anchor: int,
                  weather: Mapping[int, WeatherRecord], stats: NormStats) -> np.ndarray:
    return np.asarray([
        encode(poi, slot, weather[slot], stats)
        for slot in window.slots(anchor)
        for poi in pois
    ])


@dataclass(frozen=True)
class StepTrace:
    """Weight-independent inputs of one round, recorded for tuning.

    `features` holds the z-scored rows before any feature weighting, so a
    tuner can rescore the round under candidate weights without replaying
    the stream.
    """

    anchor: int
    features: np.ndarray = field(compare=False)
    y: np.ndarray = field(compare=False)
    label_mask: np.ndarray = field(compare=False)
    label_values: np.ndarray = field(compare=False)


def step_traced(state: PipelineState, new_readings: list[Reading],
                new_weather: WeatherRecord) -> tuple[Prediction, PipelineState, StepTrace]:
    """Run the round for anchor t = state.anchor + 1 and return (F, new state, trace).

    `new_weather` must describe slot t + t_f, the one slot entering the
    window.  Nothing in `state` is mutated; any error leaves it untouched.
    """
    config = state.config
    window = config.window
    t = state.anchor + 1
    new_slot = t + window.t_f
    if new_weather.slot != new_slot:
        raise DataError(
            f"expected weather for slot {new_slot}, got slot {new_weather.slot}"
        )
    if state.coarse.last_slot() != new_slot - 1:
        raise StateError(
            f"coarse series ends at {state.coarse.last_slot()}, cannot forecast slot {new_slot}"
        )

    weather = {slot: rec for slot, rec in state.weather.items() if slot >= t - window.t_h}
    weather[new_slot] = new_weather
    for slot in window.slots(t):
        if slot not in weather:
            raise DataError(f"weather missing for window slot {slot}")

    mu_hat = state.forecaster.predict_next(state.coarse)
    pre = pre_estimate(state, new_readings, mu_hat)
    features = _feature_rows(state.pois, window, t, weather, state.stats)
    graph = build_graph(t, window, features, pre.label_mask, pre.label_values,
                        config.weights, config.similarity)
    values = solve_closed_form(graph, pre.y, config.propagation)
    prediction = Prediction(anchor=t, window=window, values=values,
                            label_mask=pre.label_mask)

    # refresh the coarse series from F^t over the new window, keep frozen history
    means = coarse_means(values, window)
    kept = tuple(entry for entry in state.coarse.entries if entry[0] < t - window.t_h)
    refreshed = tuple(
        (slot, float(means[offset]), weather[slot])
        for offset, slot in enumerate(window.slots(t))
    )
    coarse = CoarseSeries((kept + refreshed)[-config.history_limit:])

    new_state = replace(
        state,
        anchor=t,
        prev_prediction=prediction,
        prev_graph=graph,
        labels=pre.labels,
        weather=weather,
        coarse=coarse,
    )
    trace = StepTrace(anchor=t, features=features, y=pre.y,
                      label_mask=pre.label_mask, label_values=pre.label_values)
    return prediction, new_state, trace


def step(state: PipelineState, new_readings: list[Reading],
         new_weather: WeatherRecord) -> tuple[Prediction, PipelineState]:
    """`step_traced` without the trace; see there for the contract."""
    prediction, new_state, _ = step_traced(state, new_readings, new_weather)
    return prediction, new_state


def _weather_by_slot(records: Iterable[WeatherRecord]) -> dict[int, WeatherRecord]:
    by_slot: dict[int, WeatherRecord] = {}
    for record in records:
        if record.slot in by_slot:
            raise DataError(f"duplicate weather record for slot {record.slot}")
        by_slot[record.slot] = record
    return by_slot


def train_forecaster(config: PipelineConfig, series: CoarseSeries) -> Forecaster:
    """Build the configured forecaster, falling back to persistence when the
    coarse history is too short to train on."""
    if config.forecaster == "lstm":
        if len(series) >= 4:
            return Forecaster("lstm", lstm_train(series, config.lstm))
        logger.warning(
            "coarse history of %d slot(s) is too short to train on; "
            "falling back to persistence", len(series),
        )
    return Forecaster("persistence")


def bootstrap(config: PipelineConfig, pois: list[Poi], sensors: dict[int, Sensor],
              initial_readings: list[Reading],
              weather_history: Iterable[WeatherRecord]) -> PipelineState:
    """Initialize a stream so the first step() handles the next unseen slot.

    The synthetic prior prediction is the mean of all initial readings at
    every node, anchored at the newest reading slot.  Normalization
    statistics are fitted on that first window's raw features and frozen.
    The coarse series seeds with the prior mean across the window, extended
    backwards with per-slot reading means while weather and readings exist.
    """
    window = config.window
    if len(pois) != window.l:
        raise ConfigError(f"{len(pois)} points of interest but window expects {window.l}")
    pois = sorted(pois, key=lambda p: p.poi_id)
    if [p.poi_id for p in pois] != list(range(window.l)):
        raise DataError("poi ids must be exactly 0..l-1")
    for sensor in sensors.values():
        if not (0 <= sensor.poi_id < window.l):
            raise DataError(f"sensor {sensor.sensor_id} references unknown poi {sensor.poi_id}")
    if not initial_readings:
        raise DataError("cannot bootstrap without at least one reading")

    anchor = max(r.slot for r in initial_readings)
    weather = _weather_by_slot(weather_history)
    for slot in window.slots(anchor):
        if slot not in weather:
            raise DataError(f"weather missing for bootstrap window slot {slot}")

    mean = float(np.mean([r.value for r in initial_readings]))
    prediction = Prediction(
        anchor=anchor,
        window=window,
        values=np.full(window.n_nodes, mean),
        label_mask=np.zeros(window.n_nodes, dtype=bool),
    )

    labels = LabelStore()
    per_slot_values: dict[int, list[float]] = {}
    for reading in initial_readings:
        sensor = sensors.get(reading.sensor_id)
        if sensor is None:
            raise DataError(f"reading references unknown sensor {reading.sensor_id}")
        per_slot_values.setdefault(reading.slot, []).append(reading.value)
        if reading.slot >= anchor - window.t_h:
            labels.add(reading.slot, sensor.poi_id, reading.value)

    raw = np.asarray([
        encode_raw(poi, slot, weather[slot])
        for slot in window.slots(anchor)
        for poi in pois
    ])
    stats = NormStats.fit(raw)

    # window slots take the prior mean (coarse view of the constant prior);
    # older slots take their plain reading mean while data lasts
    entries = [(slot, mean, weather[slot]) for slot in window.slots(anchor)]
    slot = anchor - window.t_h - 1
    while (slot in weather and slot in per_slot_values
           and len(entries) < config.history_limit):
        entries.insert(0, (slot, float(np.mean(per_slot_values[slot])), weather[slot]))
        slot -= 1
    coarse = CoarseSeries(tuple(entries[-config.history_limit:]))

    state = PipelineState(
        config=config,
        pois=tuple(pois),
        sensors=dict(sensors),
        stats=stats,
        forecaster=train_forecaster(config, coarse),
        anchor=anchor,
        prev_prediction=prediction,
        labels=labels,
        weather={slot: weather[slot] for slot in window.slots(anchor)},
        coarse=coarse,
    )
    state.check()
    return state


def retrain_forecaster(state: PipelineState) -> PipelineState:
    """New state whose forecaster is re-fit on the current coarse series."""
    return replace(state, forecaster=train_forecaster(state.config, state.coarse))


SNAPSHOT_FORMAT = "corrcast-state v1"


def _weather_to_obj(record: WeatherRecord) -> dict:
    return {
        "slot": record.slot,
        "weather_type": record.weather_type,
        "wind_speed": record.wind_speed,
        "wind_dir_deg": record.wind_dir_deg,
        "temperature_c": record.temperature_c,
        "humidity_pct": record.humidity_pct,
    }


def _weather_from_obj(obj: dict) -> WeatherRecord:
    return WeatherRecord(
        slot=int(obj["slot"]),
        weather_type=int(obj["weather_type"]),
        wind_speed=float(obj["wind_speed"]),
        wind_dir_deg=float(obj["wind_dir_deg"]),
        temperature_c=float(obj["temperature_c"]),
        humidity_pct=float(obj["humidity_pct"]),
    )


def to_snapshot(state: PipelineState) -> dict:
    """JSON-serializable snapshot sufficient for bit-identical continuation.

    The previous graph is omitted: no later round reads it, and it is
    reproducible from the rest of the state.
    """
    config = state.config
    forecaster: dict = {"kind": state.forecaster.kind}
    if state.forecaster.params is not None:
        p = state.forecaster.params
        forecaster["params"] = {
            "w_x": p.w_x.tolist(),
            "w_h": p.w_h.tolist(),
            "b": p.b.tolist(),
            "w_out": p.w_out.tolist(),
            "w_skip": p.w_skip,
            "b_out": p.b_out,
        }
    return {
        "format": SNAPSHOT_FORMAT,
        "config": {
            "window": {"t_h": config.window.t_h, "t_f": config.window.t_f,
                       "l": config.window.l},
            "similarity": {"alpha1": config.similarity.alpha1,
                           "alpha2": config.similarity.alpha2,
                           "k": config.similarity.k},
            "propagation": {"lam": config.propagation.lam,
                            "tol": config.propagation.tol,
                            "max_iter": config.propagation.max_iter},
            "beta": list(config.weights.beta),
            "forecaster": config.forecaster,
            "lstm": {"hidden_size": config.lstm.hidden_size,
                     "learning_rate": config.lstm.learning_rate,
                     "epochs": config.lstm.epochs,
                     "seed": config.lstm.seed},
            "history_limit": config.history_limit,
        },
        "pois": [[p.poi_id, p.x, p.y, p.z] for p in state.pois],
        "sensors": sorted([s.sensor_id, s.poi_id] for s in state.sensors.values()),
        "stats": {"mean": list(state.stats.mean), "std": list(state.stats.std)},
        "forecaster": forecaster,
        "anchor": state.anchor,
        "prediction": {
            "values": state.prev_prediction.values.tolist(),
            "label_mask": [int(v) for v in state.prev_prediction.label_mask],
        },
        "labels": {
            str(slot): {str(poi): list(entry) for poi, entry in per.items()}
            for slot, per in state.labels.to_dict().items()
        },
        "weather": [_weather_to_obj(state.weather[slot])
                    for slot in sorted(state.weather)],
        "coarse": [
            {"slot": slot, "mu": mu, "weather": _weather_to_obj(record)}
            for slot, mu, record in state.coarse.entries
        ],
    }


def from_snapshot(snapshot: dict) -> PipelineState:
    """Rebuild a state from to_snapshot output, rejecting unknown versions."""
    if snapshot.get("format") != SNAPSHOT_FORMAT:
        raise DataError(
            f"unsupported state snapshot format: {snapshot.get('format')!r}"
        )
    cfg = snapshot["config"]
    config = PipelineConfig(
        window=WindowConfig(**{k: int(v) for k, v in cfg["window"].items()}),
        similarity=SimilarityParams(alpha1=float(cfg["similarity"]["alpha1"]),
                                    alpha2=float(cfg["similarity"]["alpha2"]),
                                    k=int(cfg["similarity"]["k"])),
        propagation=PropagationParams(lam=float(cfg["propagation"]["lam"]),
                                      tol=float(cfg["propagation"]["tol"]),
                                      max_iter=int(cfg["propagation"]["max_iter"])),
        weights=FeatureWeights(tuple(float(b) for b in cfg["beta"])),
        forecaster=cfg["forecaster"],
        lstm=LstmConfig(hidden_size=int(cfg["lstm"]["hidden_size"]),
                        learning_rate=float(cfg["lstm"]["learning_rate"]),
                        epochs=int(cfg["lstm"]["epochs"]),
                        seed=int(cfg["lstm"]["seed"])),
        history_limit=int(cfg["history_limit"]),
    )
    fc = snapshot["forecaster"]
    if fc.get("params") is not None:
        p = fc["params"]
        params = LstmParams(
            w_x=np.asarray(p["w_x"], dtype=float),
            w_h=np.asarray(p["w_h"], dtype=float),
            b=np.asarray(p["b"], dtype=float),
            w_out=np.asarray(p["w_out"], dtype=float),
            w_skip=float(p["w_skip"]),
            b_out=float(p["b_out"]),
        )
        forecaster = Forecaster(fc["kind"], params)
    else:
        forecaster = Forecaster(fc["kind"])
    window = config.window
    anchor = int(snapshot["anchor"])
    prediction = Prediction(
        anchor=anchor,
        window=window,
        values=np.asarray(snapshot["prediction"]["values"], dtype=float),
        label_mask=np.asarray(snapshot["prediction"]["label_mask"], dtype=int) != 0,
    )
    state = PipelineState(
        config=config,
        pois=tuple(Poi(int(p[0]), float(p[1]), float(p[2]), float(p[3]))
                   for p in snapshot["pois"]),
        sensors={int(s[0]): Sensor(int(s[0]), int(s[1])) for s in snapshot["sensors"]},
        stats=NormStats(mean=tuple(float(v) for v in snapshot["stats"]["mean"]),
                        std=tuple(float(v) for v in snapshot["stats"]["std"])),
        forecaster=forecaster,
        anchor=anchor,
        prev_prediction=prediction,
        labels=LabelStore.from_dict({
            int(slot): {int(poi): (float(e[0]), int(e[1])) for poi, e in per.items()}
            for slot, per in snapshot["labels"].items()
        }),
        weather={int(obj["slot"]): _weather_from_obj(obj)
                 for obj in snapshot["weather"]},
        coarse=CoarseSeries(tuple(
            (int(e["slot"]), float(e["mu"]), _weather_from_obj(e["weather"]))
            for e in snapshot["coarse"]
        )),
    )
    state.check()
    return state


def save_state(state: PipelineState, path) -> None:
    """Write the snapshot as deterministic JSON (sorted keys, exact floats)."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(to_snapshot(state), handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_state(path) -> PipelineState:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            snapshot = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataError(f"state snapshot is not valid JSON: {exc}") from exc
    return from_snapshot(snapshot)
