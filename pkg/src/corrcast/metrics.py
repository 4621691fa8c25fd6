"""Prediction quality metrics and the inverse-distance baseline.

The headline metric is the mean relative error over unlabeled nodes,
|F_n - truth_n| / max(truth_n, floor), with the denominator floored at 1.0
in truth units so near-zero ground truth cannot blow the ratio up.  By
default only the current subgraph is scored (the real-time deliverable);
the whole window is available for diagnostics.

The baseline interpolator is inverse distance weighting in the space-time
metric (x, y, z, time_scale * slot): a convex combination of reading
values with weights 1/d^power, exact at data points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .model import Prediction, node_poi, node_slot

#: relative-error denominators never drop below this, in truth units
TRUTH_FLOOR = 1.0

SCOPE_CURRENT = "current-subgraph"
SCOPE_WINDOW = "whole-window"
SCOPES = (SCOPE_CURRENT, SCOPE_WINDOW)


@dataclass(frozen=True)
class ErrorReport:
    """Relative-error summary: per-slot (slot, mean, node count) rows, the
    node-weighted aggregate mean, and the total node count scored."""

    per_slot: tuple[tuple[int, float, int], ...]
    mean: float
    n_nodes: int

    def __post_init__(self) -> None:
        if len(self.per_slot) == 0:
            raise ValueError("error report must cover at least one slot")
        if any(count < 1 or error < 0.0 for _, error, count in self.per_slot):
            raise ValueError("per-slot rows need positive node counts and errors >= 0")
        if self.n_nodes != sum(count for _, _, count in self.per_slot):
            raise ValueError("total node count disagrees with the per-slot rows")


def relative_error(prediction: Prediction, truth: Mapping[int, Sequence[float]],
                   scope: str = SCOPE_CURRENT,
                   floor: float = TRUTH_FLOOR) -> ErrorReport:
    """Mean relative error of one prediction over its scoped unlabeled nodes.

    `truth` maps each scoped slot to per-POI ground truth.  Labeled nodes
    are skipped: they carry measurements, so scoring them says nothing
    about the interpolation.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    if floor <= 0.0:
        raise ValueError(f"floor must be positive, got {floor}")
    window = prediction.window
    if scope == SCOPE_CURRENT:
        nodes = range(window.t_h * window.l, (window.t_h + 1) * window.l)
    else:
        nodes = range(window.n_nodes)
    ratios = []
    for node in nodes:
        if prediction.label_mask[node]:
            continue
        slot = node_slot(node, window, prediction.anchor)
        per_poi = truth.get(slot)
        if per_poi is None:
            raise DataError(f"truth missing for slot {slot}")
        value = float(per_poi[node_poi(node, window)])
        ratios.append(abs(float(prediction.values[node]) - value) / max(value, floor))
    if not ratios:
        raise ValueError("scope holds no unlabeled nodes")
    mean = float(np.mean(ratios))
    return ErrorReport(per_slot=((prediction.anchor, mean, len(ratios)),),
                       mean=mean, n_nodes=len(ratios))


def merge_reports(reports: Iterable[ErrorReport]) -> ErrorReport:
    """Combine reports into one; the aggregate mean is node-weighted, so it
    equals the mean over every node error that went into the inputs."""
    rows: list[tuple[int, float, int]] = []
    total = 0.0
    count = 0
    for report in reports:
        rows.extend(report.per_slot)
        total += report.mean * report.n_nodes
        count += report.n_nodes
    if count == 0:
        raise ValueError("no reports to merge")
    return ErrorReport(per_slot=tuple(rows), mean=total / count, n_nodes=count)


def median_nn_spacing(coords: np.ndarray) -> float:
    """Median nearest-neighbor distance; the default worth of one slot in
    the space-time metric."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 2:
        raise ValueError("need at least two coordinate rows")
    deltas = coords[:, None, :] - coords[None, :, :]
    distances = np.sqrt(np.sum(deltas ** 2, axis=-1))
    np.fill_diagonal(distances, np.inf)
    return float(np.median(distances.min(axis=1)))


def idw_predict(readings: Sequence[tuple[Sequence[float], int, float]],
                target: tuple[Sequence[float], int],
                power: float = 2.0,
                time_scale: float = 1.0) -> float:
    """Inverse-distance interpolation of the readings at the target point.

    Each reading is ((x, y, z), slot, value); distance is Euclidean in
    (x, y, z, time_scale * slot).  A target coincident with a reading
    returns that reading's value exactly (first match wins).
    """
    readings = list(readings)
    if not readings:
        raise ValueError("at least one reading is required")
    if power <= 0.0:
        raise ValueError(f"power must be positive, got {power}")
    if time_scale < 0.0:
        raise ValueError(f"time scale must be >= 0, got {time_scale}")
    target_coord, target_slot = target
    tx = np.asarray(target_coord, dtype=float)
    weight_sum = 0.0
    value_sum = 0.0
    for coord, slot, value in readings:
        delta = np.asarray(coord, dtype=float) - tx
        distance = float(np.sqrt(delta @ delta + (time_scale * (slot - target_slot)) ** 2))
        if distance == 0.0:
            return float(value)
        weight = distance ** -power
        weight_sum += weight
        value_sum += weight * float(value)
    return value_sum / weight_sum
