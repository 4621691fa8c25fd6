"""Command-line interface: ingestion, dispatch, persistence, and reports.

Subcommands:

* ``simulate``       generate a synthetic scenario and write its files
* ``predict``        stream slots in order and write predictions plus a
                     resumable state snapshot
* ``tune``           fit feature weights with the genetic search
* ``evaluate``       score predictions against ground truth, always paired
                     with the inverse-distance baseline on the same readings
* ``inspect-graph``  dump edge-weight statistics and a degree histogram for
                     one anchor slot

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical error.  All outputs are deterministic given identical inputs
and seed; reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from . import fileio, report
from .config import RunConfig, load as load_config
from .errors import (
    ConfigError,
    DataError,
    DegenerateGraphError,
    DegenerateSimilarityError,
    NumericalError,
    StateError,
)
from .features import FeatureWeights, WeatherRecord
from .metrics import (
    ErrorReport,
    idw_predict,
    median_nn_spacing,
    merge_reports,
    relative_error,
)
from .model import Poi, Prediction, Reading, Sensor
from .pipeline import (
    PipelineState,
    bootstrap,
    load_state,
    save_state,
    step,
)
from .simgen import expected_sparsity, generate
from .tune import FitnessParams, collect_tuning_set, run_ga

logger = logging.getLogger(__name__)

#: configuration fields a sweep manifest may vary
SWEEPABLE = {"M": "m", "T_h": "t_h", "T_f": "t_f"}


class _UsageError(ConfigError):
    """Bad command line; mapped to exit code 1 like other usage errors."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise _UsageError(message)


def _require_path(value: Optional[str], key: str) -> Path:
    if value is None:
        raise ConfigError(
            f"paths.{key} must be set in the configuration for this command"
        )
    return Path(value)


def _load_sensors(path: Path) -> dict[int, Sensor]:
    sensors: dict[int, Sensor] = {}
    for sensor in fileio.read_sensors(path):
        if sensor.sensor_id in sensors:
            raise DataError(f"{path}: duplicate sensor id {sensor.sensor_id}")
        sensors[sensor.sensor_id] = sensor
    return sensors


def _weather_map(records: Iterable[WeatherRecord]) -> dict[int, WeatherRecord]:
    by_slot: dict[int, WeatherRecord] = {}
    for record in records:
        if record.slot in by_slot:
            raise DataError(f"duplicate weather record for slot {record.slot}")
        by_slot[record.slot] = record
    if not by_slot:
        raise DataError("weather file holds no records")
    for slot in range(min(by_slot), max(by_slot) + 1):
        if slot not in by_slot:
            raise DataError(f"weather gap at slot {slot}")
    return by_slot


def _readings_by_slot(readings: Iterable[Reading]) -> dict[int, list[Reading]]:
    groups: dict[int, list[Reading]] = {}
    for reading in readings:
        groups.setdefault(reading.slot, []).append(reading)
    return groups


def _load_weights(
    beta_flag: Optional[str], config: RunConfig
) -> Optional[FeatureWeights]:
    path = beta_flag if beta_flag is not None else config.paths.beta
    if path is None:
        return None
    return fileio.read_beta(path)


class _StreamInputs:
    """The world one stream runs over: geometry, readings, weather."""

    def __init__(self, pois: Sequence[Poi], sensors: dict[int, Sensor],
                 readings: Sequence[Reading],
                 weather_records: Sequence[WeatherRecord]):
        self.pois = list(pois)
        self.sensors = sensors
        self.readings = tuple(readings)
        self.weather_records = tuple(weather_records)
        self.weather = _weather_map(weather_records)
        self.groups = _readings_by_slot(readings)

    @classmethod
    def from_files(cls, config: RunConfig) -> "_StreamInputs":
        paths = config.paths
        return cls(
            pois=fileio.read_pois(_require_path(paths.pois, "pois")),
            sensors=_load_sensors(_require_path(paths.sensors, "sensors")),
            readings=fileio.read_readings(_require_path(paths.readings, "readings")),
            weather_records=fileio.read_weather(_require_path(paths.weather, "weather")),
        )

    @classmethod
    def from_scenario(cls, scenario) -> "_StreamInputs":
        return cls(
            pois=scenario.pois,
            sensors={s.sensor_id: s for s in scenario.sensors},
            readings=scenario.readings,
            weather_records=scenario.weather,
        )

    def first_anchor(self, t_h: int) -> int:
        """Earliest anchor whose full history window has weather."""
        earliest = min(self.weather) + t_h
        candidates = [slot for slot in self.groups if slot >= earliest]
        if not candidates:
            raise DataError(
                f"no reading at or after slot {earliest}; "
                "cannot bootstrap a full window"
            )
        return min(candidates)

    def last_anchor(self, t_f: int) -> int:
        return max(self.weather) - t_f


def _bootstrap_stream(config: RunConfig, inputs: _StreamInputs,
                      weights: Optional[FeatureWeights]) -> PipelineState:
    anchor = inputs.first_anchor(config.t_h)
    initial = [r for r in inputs.readings if r.slot <= anchor]
    return bootstrap(
        config.pipeline(weights),
        inputs.pois,
        inputs.sensors,
        initial,
        inputs.weather_records,
    )


def _stream_rounds(state: PipelineState, inputs: _StreamInputs,
                   t_f: int) -> list[tuple[int, list[Reading], WeatherRecord]]:
    last = inputs.last_anchor(t_f)
    return [
        (t, inputs.groups.get(t, []), inputs.weather[t + t_f])
        for t in range(state.anchor + 1, last + 1)
    ]


def cmd_simulate(config: RunConfig, out: Path) -> int:
    scenario_config = config.scenario()
    scenario = generate(scenario_config)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_pois(out / "pois.csv", scenario.pois)
    fileio.write_sensors(out / "sensors.csv", scenario.sensors)
    fileio.write_weather(out / "weather.csv", scenario.weather)
    fileio.write_readings(out / "readings.csv", scenario.readings)
    fileio.write_truth(out / "truth.csv", scenario.truth)
    print(f"expected sparsity: {expected_sparsity(scenario_config):.6g}")
    print(f"wrote {len(scenario.readings)} readings over {scenario_config.n_slots} "
          f"slots to {out}")
    return 0


def cmd_predict(config: RunConfig, out: Path, resume: Optional[Path],
                beta: Optional[str]) -> int:
    out.mkdir(parents=True, exist_ok=True)
    predictions_path = out / "predictions.csv"
    rows: list[fileio.PredictionRow] = []
    inputs = _StreamInputs.from_files(config)
    if resume is not None:
        state = load_state(resume)
        if predictions_path.exists():
            rows = list(fileio.read_predictions(predictions_path))
    else:
        state = _bootstrap_stream(config, inputs, _load_weights(beta, config))
    first = state.anchor + 1
    processed = 0
    for _, new_readings, new_weather in _stream_rounds(state, inputs, config.t_f):
        prediction, state = step(state, new_readings, new_weather)
        rows.extend(fileio.prediction_rows(prediction))
        processed += 1
    fileio.write_predictions(predictions_path, rows)
    save_state(state, out / "state.json")
    if processed:
        print(f"processed anchors {first}..{state.anchor} ({processed} slots)")
    else:
        print("no new slots to process")
    print(f"predictions: {predictions_path}")
    print(f"state: {out / 'state.json'}")
    return 0


def cmd_tune(config: RunConfig, out: Path) -> int:
    inputs = _StreamInputs.from_files(config)
    state = _bootstrap_stream(config, inputs, None)
    rounds = [
        (new_readings, new_weather)
        for _, new_readings, new_weather in _stream_rounds(state, inputs, config.t_f)
    ]
    tuning_set, _ = collect_tuning_set(state, rounds)
    params = FitnessParams(
        similarity=config.similarity(), propagation=config.propagation()
    )
    result = run_ga(tuning_set, config.ga(), params)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_beta(out / "beta.csv", result.weights)
    fileio.write_tuning_report(out / "tuning_report.csv", result.history)
    report.save_fitness_history(out / "tuning.png", result.history)
    print(f"tuned on {len(tuning_set.slots)} slots")
    print(f"termination: {result.termination} after {result.generations} generation(s)")
    print(f"best fitness: {result.best_fitness:.6g}")
    print(f"weights: {out / 'beta.csv'}")
    return 0


def _rebuild_windows(rows: Sequence[fileio.PredictionRow],
                     config: RunConfig) -> dict[int, Prediction]:
    """Group flat rows back into per-anchor Prediction windows."""
    window = config.window()
    by_anchor: dict[int, list[fileio.PredictionRow]] = {}
    for row in rows:
        by_anchor.setdefault(row.slot - row.subgraph_offset, []).append(row)
    windows: dict[int, Prediction] = {}
    for anchor, group in by_anchor.items():
        if len(group) != window.n_nodes:
            raise DataError(
                f"anchor {anchor} has {len(group)} rows, window expects "
                f"{window.n_nodes}; prediction file does not match T_h/T_f/L"
            )
        values = np.empty(window.n_nodes)
        mask = np.zeros(window.n_nodes, dtype=bool)
        seen = np.zeros(window.n_nodes, dtype=bool)
        for row in group:
            if not (-window.t_h <= row.subgraph_offset <= window.t_f):
                raise DataError(
                    f"anchor {anchor}: subgraph offset {row.subgraph_offset} "
                    f"outside [-{window.t_h}, {window.t_f}]"
                )
            if not (0 <= row.poi < window.l):
                raise DataError(f"anchor {anchor}: poi {row.poi} outside 0..{window.l - 1}")
            index = (row.subgraph_offset + window.t_h) * window.l + row.poi
            if seen[index]:
                raise DataError(
                    f"anchor {anchor}: duplicate row for slot {row.slot}, poi {row.poi}"
                )
            seen[index] = True
            values[index] = row.value
            mask[index] = row.labeled
        windows[anchor] = Prediction(
            anchor=anchor, window=window, values=values, label_mask=mask
        )
    return windows


def _idw_window(prediction: Prediction,
                readings: Sequence[tuple[np.ndarray, int, float]],
                coords: np.ndarray, power: float, time_scale: float) -> Prediction:
    """Baseline twin of one window: every node re-predicted by IDW.

    Uses the readings a streaming system would hold at the window's anchor:
    slots from anchor - t_h through the anchor.  If every sensor slept for
    that whole span, falls back to everything up to the anchor.
    """
    window = prediction.window
    anchor = prediction.anchor
    available = [r for r in readings if anchor - window.t_h <= r[1] <= anchor]
    if not available:
        available = [r for r in readings if r[1] <= anchor]
    if not available:
        raise DataError(f"no readings at or before anchor {anchor} for the baseline")
    values = np.empty(window.n_nodes)
    for node in range(window.n_nodes):
        slot = anchor + node // window.l - window.t_h
        poi = node % window.l
        values[node] = idw_predict(
            available, (coords[poi], slot), power=power, time_scale=time_scale
        )
    return Prediction(
        anchor=anchor, window=window, values=values,
        label_mask=prediction.label_mask,
    )


def _score_windows(windows: dict[int, Prediction],
                   truth: dict[int, np.ndarray],
                   reading_points: Sequence[tuple[np.ndarray, int, float]],
                   coords: np.ndarray, config: RunConfig,
                   time_scale: float) -> tuple[list[fileio.MetricsRow], dict[str, ErrorReport]]:
    scope = config.error_scope
    rows: list[fileio.MetricsRow] = []
    cg_reports, idw_reports = [], []
    for anchor in sorted(windows):
        prediction = windows[anchor]
        cg = relative_error(prediction, truth, scope=scope)
        baseline = _idw_window(
            prediction, reading_points, coords, config.idw_power, time_scale
        )
        idw = relative_error(baseline, truth, scope=scope)
        rows.append(fileio.MetricsRow(str(anchor), "cg", scope, cg.mean, cg.n_nodes))
        rows.append(fileio.MetricsRow(str(anchor), "idw", scope, idw.mean, idw.n_nodes))
        cg_reports.append(cg)
        idw_reports.append(idw)
    aggregates = {
        "cg": merge_reports(cg_reports),
        "idw": merge_reports(idw_reports),
    }
    for method in ("cg", "idw"):
        total = aggregates[method]
        rows.append(
            fileio.MetricsRow("all", method, scope, total.mean, total.n_nodes)
        )
    return rows, aggregates


def _reading_points(readings: Iterable[Reading], sensors: dict[int, Sensor],
                    pois: Sequence[Poi]) -> list[tuple[np.ndarray, int, float]]:
    coords = {p.poi_id: p.coords() for p in pois}
    points = []
    for reading in readings:
        sensor = sensors.get(reading.sensor_id)
        if sensor is None:
            raise DataError(f"reading references unknown sensor {reading.sensor_id}")
        if sensor.poi_id not in coords:
            raise DataError(
                f"sensor {sensor.sensor_id} references unknown poi {sensor.poi_id}"
            )
        points.append((coords[sensor.poi_id], reading.slot, reading.value))
    return points


def _time_scale(config: RunConfig, coords: np.ndarray) -> float:
    if config.time_scale is not None:
        return config.time_scale
    return median_nn_spacing(coords)


def run_synthetic_experiment(
    config: RunConfig, weights: Optional[FeatureWeights] = None
) -> dict[str, ErrorReport]:
    """Generate a scenario, stream it, and score both methods in memory.

    Returns the aggregate ErrorReport per method ("cg" and "idw"); the
    sweep path and the acceptance experiment both build on this.
    """
    scenario = generate(config.scenario())
    inputs = _StreamInputs.from_scenario(scenario)
    state = _bootstrap_stream(config, inputs, weights)
    windows: dict[int, Prediction] = {}
    for _, new_readings, new_weather in _stream_rounds(state, inputs, config.t_f):
        prediction, state = step(state, new_readings, new_weather)
        windows[prediction.anchor] = prediction
    if not windows:
        raise DataError("scenario too short: no slot left to stream after bootstrap")
    coords = np.array([p.coords() for p in scenario.pois])
    points = _reading_points(scenario.readings, inputs.sensors, scenario.pois)
    _, aggregates = _score_windows(
        windows, scenario.truth_by_slot(), points, coords, config,
        _time_scale(config, coords),
    )
    return aggregates


def _load_sweep_manifest(path: Path) -> dict[str, list[float]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read sweep manifest {path}: {exc}") from exc
    try:
        parsed = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(parsed, dict) or not parsed:
        raise ConfigError(f"{path} must map parameter names to value lists")
    manifest = {}
    for key, values in parsed.items():
        if key not in SWEEPABLE:
            raise ConfigError(
                f"cannot sweep {key!r}; supported: {sorted(SWEEPABLE)}"
            )
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep values for {key} must be a non-empty list")
        for value in values:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"sweep values for {key} must be integers")
        manifest[key] = values
    return manifest


def _run_sweep(config: RunConfig, manifest: dict[str, list[float]],
               weights: Optional[FeatureWeights]) -> list[fileio.SweepRow]:
    rows = []
    for parameter in sorted(manifest):
        field = SWEEPABLE[parameter]
        for value in manifest[parameter]:
            varied = dataclasses.replace(config, **{field: value})
            aggregates = run_synthetic_experiment(varied, weights)
            for method in ("cg", "idw"):
                rows.append(
                    fileio.SweepRow(
                        parameter, float(value), method, aggregates[method].mean
                    )
                )
            logger.info("sweep %s=%s done", parameter, value)
    return rows


def cmd_evaluate(config: RunConfig, out: Path, sweep: Optional[Path],
                 beta: Optional[str]) -> int:
    paths = config.paths
    predictions = fileio.read_predictions(
        _require_path(paths.predictions, "predictions")
    )
    truth = fileio.read_truth(_require_path(paths.truth, "truth"))
    pois = list(fileio.read_pois(_require_path(paths.pois, "pois")))
    sensors = _load_sensors(_require_path(paths.sensors, "sensors"))
    readings = fileio.read_readings(_require_path(paths.readings, "readings"))
    if not predictions:
        raise DataError("predictions file holds no rows")

    windows = _rebuild_windows(predictions, config)
    coords = np.array([p.coords() for p in sorted(pois, key=lambda p: p.poi_id)])
    points = _reading_points(readings, sensors, pois)
    rows, aggregates = _score_windows(
        windows, truth, points, coords, config, _time_scale(config, coords)
    )
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_metrics(out / "metrics.csv", rows)
    report.save_error_timeseries(out / "errors.png", rows)
    for method in ("cg", "idw"):
        total = aggregates[method]
        print(
            f"{method} {config.error_scope} mean relative error: "
            f"{total.mean:.6g} over {total.n_nodes} nodes"
        )
    print(f"metrics: {out / 'metrics.csv'}")

    if sweep is not None:
        weights = _load_weights(beta, config)
        sweep_rows = _run_sweep(config, _load_sweep_manifest(sweep), weights)
        fileio.write_sweep(out / "sweep.csv", sweep_rows)
        report.save_sweep_curve(out / "sweep.png", sweep_rows)
        print(f"sweep: {out / 'sweep.csv'}")
    return 0


def cmd_inspect_graph(config: RunConfig, out: Path, slot: Optional[int],
                      beta: Optional[str]) -> int:
    inputs = _StreamInputs.from_files(config)
    state = _bootstrap_stream(config, inputs, _load_weights(beta, config))
    target = inputs.last_anchor(config.t_f) if slot is None else slot
    if target <= state.anchor:
        raise DataError(
            f"slot {target} is not past the bootstrap anchor {state.anchor}"
        )
    if target > inputs.last_anchor(config.t_f):
        raise DataError(
            f"slot {target} has no weather for its future window "
            f"(last streamable anchor is {inputs.last_anchor(config.t_f)})"
        )
    graph = None
    for t, new_readings, new_weather in _stream_rounds(state, inputs, config.t_f):
        if t > target:
            break
        _, state = step(state, new_readings, new_weather)
        graph = state.prev_graph
    assert graph is not None
    weights = graph.weights[np.triu_indices(graph.n_nodes, k=1)]
    edges = weights[weights > 0.0]
    print(f"anchor: {state.anchor}")
    print(f"nodes: {graph.n_nodes}")
    print(f"edges: {edges.size}")
    print(
        f"edge weight min/mean/max: {edges.min():.6g} / "
        f"{edges.mean():.6g} / {edges.max():.6g}"
    )
    print(
        f"degree min/mean/max: {graph.degrees.min():.6g} / "
        f"{graph.degrees.mean():.6g} / {graph.degrees.max():.6g}"
    )
    print(f"labeled nodes: {int(graph.label_mask.sum())}")
    out.mkdir(parents=True, exist_ok=True)
    report.save_degree_histogram(out / "degrees.png", graph.degrees)
    print(f"degree histogram: {out / 'degrees.png'}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="corrcast", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="run configuration YAML")
        sub.add_argument("--out", required=True, help="output directory")
        sub.add_argument("--seed", type=int, default=None,
                         help="override the configured seed")
        return sub

    add("simulate", "generate a synthetic scenario")

    predict = add("predict", "stream slots and write predictions")
    predict.add_argument("--resume", default=None,
                         help="state snapshot to continue from")
    predict.add_argument("--beta", default=None,
                         help="feature weight file (defaults to uniform)")

    add("tune", "fit feature weights with the genetic search")

    evaluate = add("evaluate", "score predictions against ground truth")
    evaluate.add_argument("--sweep", default=None,
                          help="sweep manifest YAML (parameter: [values])")
    evaluate.add_argument("--beta", default=None,
                          help="feature weight file used for sweep runs")

    inspect = add("inspect-graph", "dump graph statistics for one anchor")
    inspect.add_argument("--slot", type=int, default=None,
                         help="anchor slot to inspect (default: last streamable)")
    inspect.add_argument("--beta", default=None,
                         help="feature weight file (defaults to uniform)")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out = Path(args.out)
    if args.command == "simulate":
        return cmd_simulate(config, out)
    if args.command == "predict":
        resume = Path(args.resume) if args.resume else None
        return cmd_predict(config, out, resume, args.beta)
    if args.command == "tune":
        return cmd_tune(config, out)
    if args.command == "evaluate":
        sweep = Path(args.sweep) if args.sweep else None
        return cmd_evaluate(config, out, sweep, args.beta)
    if args.command == "inspect-graph":
        return cmd_inspect_graph(config, out, args.slot, args.beta)
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, StateError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, DegenerateGraphError, DegenerateSimilarityError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
