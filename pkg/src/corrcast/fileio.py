"""Versioned delimited file formats shared by the command-line tools.

Every file starts with a version line ``# corrcast <kind> v1`` followed by a
header row and comma-separated data rows, UTF-8 encoded with ``.`` as the
decimal separator.  Floats are written with ``repr`` so values round-trip
bit-exactly, which keeps fixture files byte-stable and lets determinism be
asserted on raw bytes.  Readers reject unknown kinds and versions, and report
malformed rows with their line number.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DataError
from .features import FEATURE_NAMES, FeatureWeights, WeatherRecord
from .model import Poi, Prediction, Reading, Sensor

FORMAT_VERSION = 1

_VERSION_RE = re.compile(r"^# corrcast (?P<kind>[a-z-]+) v(?P<version>\d+)$")

#: header row of each file kind
HEADERS: dict[str, tuple[str, ...]] = {
    "readings": ("sensor_id", "slot", "value"),
    "weather": (
        "slot",
        "weather_type",
        "wind_speed",
        "wind_dir_deg",
        "temperature_c",
        "humidity_pct",
    ),
    "sensors": ("sensor_id", "poi_id"),
    "pois": ("poi_id", "x", "y", "z"),
    "truth": ("poi", "slot", "value"),
    "predictions": ("slot", "poi", "subgraph_offset", "value", "labeled_flag"),
    "metrics": ("slot", "method", "scope", "mean_rel_err", "n_nodes"),
    "beta": ("feature", "weight"),
    "tuning-report": ("generation", "best", "best_ever", "mean"),
    "sweep": ("parameter", "value", "method", "mean_rel_err"),
}


class PredictionRow(NamedTuple):
    """One node of one emitted window."""

    slot: int
    poi: int
    subgraph_offset: int
    value: float
    labeled: bool


class MetricsRow(NamedTuple):
    """One error figure; ``slot`` is an integer or ``"all"`` for aggregates."""

    slot: str
    method: str
    scope: str
    mean_rel_err: float
    n_nodes: int


class SweepRow(NamedTuple):
    """One point of a parameter sweep."""

    parameter: str
    value: float
    method: str
    mean_rel_err: float


def _fmt(value: float) -> str:
    return repr(float(value))


def _write(path: str | Path, kind: str, rows: Iterable[Sequence[str]]) -> None:
    lines = [f"# corrcast {kind} v{FORMAT_VERSION}", ",".join(HEADERS[kind])]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read(path: str | Path, kind: str) -> list[tuple[int, list[str]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read file: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}:1: empty file, expected a version line")
    match = _VERSION_RE.match(lines[0])
    if match is None:
        raise DataError(f"{path}:1: missing version line '# corrcast {kind} v1'")
    if match["kind"] != kind:
        raise DataError(
            f"{path}:1: expected {kind} data, found {match['kind']}"
        )
    version = int(match["version"])
    if version != FORMAT_VERSION:
        raise DataError(
            f"{path}:1: unsupported {kind} version {version}, "
            f"this reader understands v{FORMAT_VERSION}"
        )
    header = HEADERS[kind]
    if len(lines) < 2 or lines[1] != ",".join(header):
        raise DataError(f"{path}:2: expected header '{','.join(header)}'")
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        fields = line.split(",")
        if len(fields) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        rows.append((lineno, fields))
    return rows


def _parse_int(path: str | Path, lineno: int, name: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: {name} is not an integer: {text!r}") from None


def _parse_float(path: str | Path, lineno: int, name: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: {name} is not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}:{lineno}: {name} must be finite, got {text!r}")
    return value


def _parse_flag(path: str | Path, lineno: int, name: str, text: str) -> bool:
    if text not in ("0", "1"):
        raise DataError(f"{path}:{lineno}: {name} must be 0 or 1, got {text!r}")
    return text == "1"


def write_readings(path: str | Path, readings: Iterable[Reading]) -> None:
    _write(
        path,
        "readings",
        ((str(r.sensor_id), str(r.slot), _fmt(r.value)) for r in readings),
    )


def read_readings(path: str | Path) -> tuple[Reading, ...]:
    readings = []
    for lineno, fields in _read(path, "readings"):
        readings.append(
            Reading(
                sensor_id=_parse_int(path, lineno, "sensor_id", fields[0]),
                slot=_parse_int(path, lineno, "slot", fields[1]),
                value=_parse_float(path, lineno, "value", fields[2]),
            )
        )
    return tuple(readings)


def write_weather(path: str | Path, records: Iterable[WeatherRecord]) -> None:
    _write(
        path,
        "weather",
        (
            (
                str(w.slot),
                str(w.weather_type),
                _fmt(w.wind_speed),
                _fmt(w.wind_dir_deg),
                _fmt(w.temperature_c),
                _fmt(w.humidity_pct),
            )
            for w in records
        ),
    )


def read_weather(path: str | Path) -> tuple[WeatherRecord, ...]:
    records = []
    for lineno, fields in _read(path, "weather"):
        try:
            record = WeatherRecord(
                slot=_parse_int(path, lineno, "slot", fields[0]),
                weather_type=_parse_int(path, lineno, "weather_type", fields[1]),
                wind_speed=_parse_float(path, lineno, "wind_speed", fields[2]),
                wind_dir_deg=_parse_float(path, lineno, "wind_dir_deg", fields[3]),
                temperature_c=_parse_float(path, lineno, "temperature_c", fields[4]),
                humidity_pct=_parse_float(path, lineno, "humidity_pct", fields[5]),
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        records.append(record)
    return tuple(records)


def write_sensors(path: str | Path, sensors: Iterable[Sensor]) -> None:
    _write(path, "sensors", ((str(s.sensor_id), str(s.poi_id)) for s in sensors))


def read_sensors(path: str | Path) -> tuple[Sensor, ...]:
    sensors = []
    for lineno, fields in _read(path, "sensors"):
        sensors.append(
            Sensor(
                sensor_id=_parse_int(path, lineno, "sensor_id", fields[0]),
                poi_id=_parse_int(path, lineno, "poi_id", fields[1]),
            )
        )
    return tuple(sensors)


def write_pois(path: str | Path, pois: Iterable[Poi]) -> None:
    _write(
        path,
        "pois",
        ((str(p.poi_id), _fmt(p.x), _fmt(p.y), _fmt(p.z)) for p in pois),
    )


def read_pois(path: str | Path) -> tuple[Poi, ...]:
    pois = []
    for lineno, fields in _read(path, "pois"):
        pois.append(
            Poi(
                poi_id=_parse_int(path, lineno, "poi_id", fields[0]),
                x=_parse_float(path, lineno, "x", fields[1]),
                y=_parse_float(path, lineno, "y", fields[2]),
                z=_parse_float(path, lineno, "z", fields[3]),
            )
        )
    return tuple(pois)


def write_truth(path: str | Path, truth: np.ndarray) -> None:
    """Write a (slots, pois) ground-truth array as (poi, slot, value) rows."""
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2:
        raise ValueError(f"truth must be a 2-d (slots, pois) array, got {truth.ndim}-d")
    _write(
        path,
        "truth",
        (
            (str(poi), str(slot), _fmt(truth[slot, poi]))
            for slot in range(truth.shape[0])
            for poi in range(truth.shape[1])
        ),
    )


def read_truth(path: str | Path) -> dict[int, np.ndarray]:
    """Read ground truth into a slot-indexed mapping of per-poi rows.

    Every slot present must cover the same contiguous poi range 0..max,
    so the result can be indexed by poi id directly.
    """
    by_slot: dict[int, dict[int, float]] = {}
    max_poi = -1
    for lineno, fields in _read(path, "truth"):
        poi = _parse_int(path, lineno, "poi", fields[0])
        slot = _parse_int(path, lineno, "slot", fields[1])
        value = _parse_float(path, lineno, "value", fields[2])
        if poi < 0:
            raise DataError(f"{path}:{lineno}: poi must be non-negative, got {poi}")
        if poi in by_slot.setdefault(slot, {}):
            raise DataError(f"{path}:{lineno}: duplicate entry for poi {poi}, slot {slot}")
        by_slot[slot][poi] = value
        max_poi = max(max_poi, poi)
    if not by_slot:
        raise DataError(f"{path}: truth file holds no rows")
    result = {}
    for slot, values in by_slot.items():
        missing = [p for p in range(max_poi + 1) if p not in values]
        if missing:
            raise DataError(
                f"{path}: slot {slot} is missing poi {missing[0]} "
                f"(expected every poi in 0..{max_poi})"
            )
        result[slot] = np.array([values[p] for p in range(max_poi + 1)])
    return result


def prediction_rows(prediction: Prediction) -> list[PredictionRow]:
    """Flatten one window into per-node rows."""
    window = prediction.window
    rows = []
    for node in range(window.n_nodes):
        offset = node // window.l - window.t_h
        rows.append(
            PredictionRow(
                slot=prediction.anchor + offset,
                poi=node % window.l,
                subgraph_offset=offset,
                value=float(prediction.values[node]),
                labeled=bool(prediction.label_mask[node]),
            )
        )
    return rows


def write_predictions(path: str | Path, rows: Iterable[PredictionRow]) -> None:
    _write(
        path,
        "predictions",
        (
            (
                str(r.slot),
                str(r.poi),
                str(r.subgraph_offset),
                _fmt(r.value),
                "1" if r.labeled else "0",
            )
            for r in rows
        ),
    )


def read_predictions(path: str | Path) -> tuple[PredictionRow, ...]:
    rows = []
    for lineno, fields in _read(path, "predictions"):
        rows.append(
            PredictionRow(
                slot=_parse_int(path, lineno, "slot", fields[0]),
                poi=_parse_int(path, lineno, "poi", fields[1]),
                subgraph_offset=_parse_int(path, lineno, "subgraph_offset", fields[2]),
                value=_parse_float(path, lineno, "value", fields[3]),
                labeled=_parse_flag(path, lineno, "labeled_flag", fields[4]),
            )
        )
    return tuple(rows)


def write_metrics(path: str | Path, rows: Iterable[MetricsRow]) -> None:
    _write(
        path,
        "metrics",
        (
            (str(r.slot), r.method, r.scope, _fmt(r.mean_rel_err), str(r.n_nodes))
            for r in rows
        ),
    )


def read_metrics(path: str | Path) -> tuple[MetricsRow, ...]:
    rows = []
    for lineno, fields in _read(path, "metrics"):
        slot = fields[0]
        if slot != "all":
            _parse_int(path, lineno, "slot", slot)
        rows.append(
            MetricsRow(
                slot=slot,
                method=fields[1],
                scope=fields[2],
                mean_rel_err=_parse_float(path, lineno, "mean_rel_err", fields[3]),
                n_nodes=_parse_int(path, lineno, "n_nodes", fields[4]),
            )
        )
    return tuple(rows)


def _feature_name(index: int, count: int) -> str:
    if count == len(FEATURE_NAMES):
        return FEATURE_NAMES[index]
    return f"f{index}"


def write_beta(path: str | Path, weights: FeatureWeights) -> None:
    count = len(weights.beta)
    _write(
        path,
        "beta",
        (
            (_feature_name(index, count), _fmt(value))
            for index, value in enumerate(weights.beta)
        ),
    )


def read_beta(path: str | Path) -> FeatureWeights:
    values = [
        _parse_float(path, lineno, "weight", fields[1])
        for lineno, fields in _read(path, "beta")
    ]
    if not values:
        raise DataError(f"{path}: weight file holds no rows")
    try:
        return FeatureWeights(beta=tuple(values))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_tuning_report(path: str | Path, history: Iterable) -> None:
    """Write per-generation GA statistics (tune.GenerationStats rows)."""
    _write(
        path,
        "tuning-report",
        (
            (str(s.generation), _fmt(s.best), _fmt(s.best_ever), _fmt(s.mean))
            for s in history
        ),
    )


def read_tuning_report(path: str | Path) -> tuple[tuple[int, float, float, float], ...]:
    rows = []
    for lineno, fields in _read(path, "tuning-report"):
        rows.append(
            (
                _parse_int(path, lineno, "generation", fields[0]),
                _parse_float(path, lineno, "best", fields[1]),
                _parse_float(path, lineno, "best_ever", fields[2]),
                _parse_float(path, lineno, "mean", fields[3]),
            )
        )
    return tuple(rows)


def write_sweep(path: str | Path, rows: Iterable[SweepRow]) -> None:
    _write(
        path,
        "sweep",
        ((r.parameter, _fmt(r.value), r.method, _fmt(r.mean_rel_err)) for r in rows),
    )


def read_sweep(path: str | Path) -> tuple[SweepRow, ...]:
    rows = []
    for lineno, fields in _read(path, "sweep"):
        rows.append(
            SweepRow(
                parameter=fields[0],
                value=_parse_float(path, lineno, "value", fields[1]),
                method=fields[2],
                mean_rel_err=_parse_float(path, lineno, "mean_rel_err", fields[3]),
            )
        )
    return tuple(rows)
