"""Shared test fixtures: minimal graphs for solver-level tests."""
from dataclasses import dataclass

import numpy as np


@dataclass
class PlainGraph:
    """Bare weights/degrees carrier satisfying the propagation solvers' needs.

    Lets hand oracles use graphs whose node count is not a valid window shape
    (e.g. the classic 2-node example).
    """

    weights: np.ndarray
    degrees: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]


def plain_graph(weights: np.ndarray) -> PlainGraph:
    weights = np.asarray(weights, dtype=float)
    return PlainGraph(weights=weights, degrees=weights.sum(axis=1))


def random_connected_graph(rng, n, density=0.4):
    """Random symmetric weight matrix with zero diagonal and positive degrees."""
    upper = np.triu(rng.uniform(0.05, 0.95, size=(n, n)), 1)
    keep = np.triu(rng.random((n, n)) < density, 1)
    upper = upper * keep
    # ring of weak edges guarantees no isolated node
    for i in range(n):
        j = (i + 1) % n
        a, b = min(i, j), max(i, j)
        if upper[a, b] == 0.0:
            upper[a, b] = 0.05
    w = upper + upper.T
    return plain_graph(w)


def noise_tuning_set(seed, n_slots=6, n_nodes=12, k=4, noise_feature=3):
    """Synthetic tuning rounds where exactly one feature is pure noise.

    Nodes split into two clusters whose pre-estimates differ by a wide gap;
    every feature except `noise_feature` tracks the cluster, so weighting
    the noise feature down strictly improves the objective.
    """
    from corrcast.tune import TuningSet, TuningSlot

    rng = np.random.default_rng(seed)
    slots = []
    for index in range(n_slots):
        group = rng.integers(0, 2, size=n_nodes).astype(float)
        y = 8.0 * group + rng.uniform(0.0, 1.0, size=n_nodes)
        features = np.empty((n_nodes, k))
        for column in range(k):
            if column == noise_feature:
                features[:, column] = rng.normal(0.0, 8.0, size=n_nodes)
            else:
                features[:, column] = 8.0 * group + rng.normal(0.0, 0.5, size=n_nodes)
        slots.append(TuningSlot(anchor=index, features=features, y=y,
                                label_mask=np.zeros(n_nodes, dtype=bool),
                                label_values=np.zeros(n_nodes)))
    return TuningSet(tuple(slots))
