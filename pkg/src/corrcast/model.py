"""Core value types for the sliding-window correlation graph.

A window at anchor slot t spans the slot range [t - t_h, t + t_f]: t_h
historical subgraphs, the current subgraph, and t_f future subgraphs, each
holding one node per point of interest.  Nodes are addressed either by
(slot, poi) pairs or by a flat index n = (slot - (t - t_h)) * l + poi, so
consecutive blocks of l indices correspond to consecutive slots, oldest
first.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Poi:
    """A point of interest: a fixed location where values are predicted."""

    poi_id: int
    x: float
    y: float
    z: float

    def coords(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class Sensor:
    """A physical sensor installed at one point of interest."""

    sensor_id: int
    poi_id: int


@dataclass(frozen=True)
class Reading:
    """One measurement reported by a sensor for one time slot."""

    sensor_id: int
    slot: int
    value: float


@dataclass(frozen=True)
class WindowConfig:
    """Shape of the sliding window: t_h past and t_f future subgraphs of l nodes."""

    t_h: int
    t_f: int
    l: int

    def __post_init__(self) -> None:
        if self.t_h < 1:
            raise ValueError(f"t_h must be >= 1, got {self.t_h}")
        if self.t_f < 1:
            raise ValueError(f"t_f must be >= 1, got {self.t_f}")
        if self.l < 1:
            raise ValueError(f"l must be >= 1, got {self.l}")

    @property
    def n_subgraphs(self) -> int:
        return self.t_h + self.t_f + 1

    @property
    def n_nodes(self) -> int:
        return self.n_subgraphs * self.l

    def slots(self, anchor: int) -> range:
        """All slots covered by the window anchored at `anchor`."""
        return range(anchor - self.t_h, anchor + self.t_f + 1)


def flat_index(tau: int, poi: int, window: WindowConfig, anchor: int) -> int:
    """Flat node index of (slot tau, poi) in the window anchored at `anchor`.

    Raises IndexError when tau falls outside the window or poi is out of range.
    """
    if not (anchor - window.t_h <= tau <= anchor + window.t_f):
        raise IndexError(
            f"slot {tau} outside window [{anchor - window.t_h}, {anchor + window.t_f}]"
        )
    if not (0 <= poi < window.l):
        raise IndexError(f"poi {poi} out of range [0, {window.l})")
    return (tau - (anchor - window.t_h)) * window.l + poi


def node_slot(n: int, window: WindowConfig, anchor: int) -> int:
    """Slot of flat node index n."""
    if not (0 <= n < window.n_nodes):
        raise IndexError(f"node {n} out of range [0, {window.n_nodes})")
    return anchor - window.t_h + n // window.l


def node_poi(n: int, window: WindowConfig) -> int:
    """Point of interest of flat node index n."""
    if not (0 <= n < window.n_nodes):
        raise IndexError(f"node {n} out of range [0, {window.n_nodes})")
    return n % window.l


def carry_index(n: int, window: WindowConfig) -> Optional[int]:
    """Index of node n of the current window inside the previous window.

    When the window advances by one slot, a node keeps its (slot, poi)
    identity but its flat index shifts by one subgraph: n maps to n + l in
    the previous window.  Nodes of the newest subgraph (the last l indices)
    did not exist one step earlier, so the mapping is undefined for them
    and None is returned.
    """
    if not (0 <= n < window.n_nodes):
        raise IndexError(f"node {n} out of range [0, {window.n_nodes})")
    if n >= window.n_nodes - window.l:
        return None
    return n + window.l


@dataclass
class CorrelationGraph:
    """One constructed graph: weights, degrees, and the labeled partition.

    Invariants (checked by validate): weights is symmetric bit-exactly with a
    zero diagonal and entries in [0, 1); degrees equal the row sums of
    weights and are strictly positive; labeled nodes carry finite values and
    never sit in a future subgraph (slots beyond the anchor have no
    measurements).
    """

    anchor: int
    window: WindowConfig
    weights: np.ndarray
    degrees: np.ndarray
    label_mask: np.ndarray
    label_values: np.ndarray

    def __post_init__(self) -> None:
        validate(self)

    @property
    def n_nodes(self) -> int:
        return self.window.n_nodes

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.label_mask)

    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.label_mask)


def validate(graph: CorrelationGraph) -> None:
    """Check every structural invariant of a correlation graph; raise ValueError."""
    n = graph.window.n_nodes
    w = graph.weights
    if w.shape != (n, n):
        raise ValueError(f"weights shape {w.shape} does not match {n} nodes")
    if graph.degrees.shape != (n,):
        raise ValueError(f"degrees shape {graph.degrees.shape} does not match {n} nodes")
    if graph.label_mask.shape != (n,) or graph.label_values.shape != (n,):
        raise ValueError("label arrays must have one entry per node")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights contain non-finite entries")
    if not np.array_equal(w, w.T):
        raise ValueError("weights matrix is not symmetric bit-exactly")
    if np.any(np.diagonal(w) != 0.0):
        raise ValueError("weights diagonal is not zero")
    if np.any(w < 0.0) or np.any(w >= 1.0):
        raise ValueError("weights outside [0, 1)")
    if not np.array_equal(graph.degrees, w.sum(axis=1)):
        raise ValueError("degrees do not equal weight row sums")
    if np.any(graph.degrees <= 0.0):
        raise ValueError("graph has an isolated node (zero degree)")
    labeled = graph.label_mask
    if not np.all(np.isfinite(graph.label_values[labeled])):
        raise ValueError("labeled nodes carry non-finite values")
    first_future = (graph.window.t_h + 1) * graph.window.l
    if np.any(labeled[first_future:]):
        raise ValueError("future subgraph nodes cannot be labeled")


@dataclass(frozen=True)
class Prediction:
    """Predicted values for every node of one window."""

    anchor: int
    window: WindowConfig
    values: np.ndarray = field(compare=False)
    label_mask: np.ndarray = field(compare=False)

    def current_subgraph(self) -> np.ndarray:
        """Values of the current (anchor-slot) subgraph, one per poi."""
        start = self.window.t_h * self.window.l
        return self.values[start : start + self.window.l]


class LabelStore:
    """Per-slot measurement accumulator with same-(slot, poi) averaging.

    Readings landing on the same poi in the same slot are averaged.  Readings
    older than the window's history horizon are dropped and logged, never
    stored.
    """

    def __init__(self) -> None:
        self._sums: dict[int, dict[int, tuple[float, int]]] = {}

    def add(self, slot: int, poi: int, value: float) -> None:
        per_slot = self._sums.setdefault(slot, {})
        total, count = per_slot.get(poi, (0.0, 0))
        per_slot[poi] = (total + float(value), count + 1)

    def ingest(self, readings_by_poi: dict[int, list[float]], slot: int) -> None:
        for poi, values in readings_by_poi.items():
            for value in values:
                self.add(slot, poi, value)

    def slots(self) -> list[int]:
        return sorted(self._sums)

    def labels_for_slot(self, slot: int) -> dict[int, float]:
        """Averaged measurement per poi for one slot."""
        per_slot = self._sums.get(slot, {})
        return {poi: total / count for poi, (total, count) in per_slot.items()}

    def prune(self, oldest: int) -> None:
        """Drop all slots older than `oldest`, logging what was discarded.

        Aging out of the window is routine, so this logs at debug; only a
        reading that arrives already stale is worth a warning (see ingest
        callers).
        """
        for slot in [s for s in self._sums if s < oldest]:
            dropped = len(self._sums.pop(slot))
            logger.debug(
                "dropped %d stored label(s) for slot %d (older than horizon %d)",
                dropped, slot, oldest,
            )

    def copy(self) -> "LabelStore":
        dup = LabelStore()
        dup._sums = {slot: dict(per) for slot, per in self._sums.items()}
        return dup

    def to_dict(self) -> dict[int, dict[int, tuple[float, int]]]:
        return {slot: dict(per) for slot, per in self._sums.items()}

    @classmethod
    def from_dict(cls, data: dict[int, dict[int, tuple[float, int]]]) -> "LabelStore":
        store = cls()
        for slot, per in data.items():
            store._sums[int(slot)] = {
                int(poi): (float(total), int(count)) for poi, (total, count) in per.items()
            }
        return store


def route_readings(
    store: LabelStore,
    readings: list[Reading],
    sensors: dict[int, Sensor],
    anchor: int,
    window: WindowConfig,
) -> None:
    """File new readings into the store, dropping and logging late arrivals.

    A reading is late when its slot precedes the window's history horizon
    (anchor - t_h); a reading for a slot after the anchor is a stream-order
    violation and raises DataError.
    """
    oldest = anchor - window.t_h
    for reading in readings:
        sensor = sensors.get(reading.sensor_id)
        if sensor is None:
            raise DataError(f"reading references unknown sensor {reading.sensor_id}")
        if reading.slot > anchor:
            raise DataError(
                f"reading for future slot {reading.slot} delivered at anchor {anchor}"
            )
        if reading.slot < oldest:
            logger.warning(
                "dropped late reading (sensor %d, slot %d) at anchor %d",
                reading.sensor_id, reading.slot, anchor,
            )
            continue
        store.add(reading.slot, sensor.poi_id, reading.value)
