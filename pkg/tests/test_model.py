"""Window index arithmetic, graph invariants, and reading routing."""
import logging

import numpy as np
import pytest

from corrcast.errors import DataError
from corrcast.model import (
    CorrelationGraph,
    LabelStore,
    Prediction,
    Reading,
    Sensor,
    WindowConfig,
    carry_index,
    flat_index,
    node_poi,
    node_slot,
    route_readings,
    validate,
)


def make_graph(window, anchor, seed=0, labeled=(0,)):
    """Small valid graph with random positive symmetric weights."""
    rng = np.random.default_rng(seed)
    n = window.n_nodes
    upper = np.triu(rng.uniform(0.1, 0.9, size=(n, n)), 1)
    w = upper + upper.T
    mask = np.zeros(n, dtype=bool)
    values = np.zeros(n)
    for i in labeled:
        mask[i] = True
        values[i] = rng.uniform(1.0, 50.0)
    return CorrelationGraph(
        anchor=anchor,
        window=window,
        weights=w,
        degrees=w.sum(axis=1),
        label_mask=mask,
        label_values=values,
    )


class TestWindowConfig:
    def test_node_count(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        assert w.n_subgraphs == 9
        assert w.n_nodes == 540

    def test_slots(self):
        w = WindowConfig(t_h=2, t_f=1, l=4)
        assert list(w.slots(10)) == [8, 9, 10, 11]

    @pytest.mark.parametrize("t_h,t_f,l", [(0, 1, 4), (1, 0, 4), (1, 1, 0)])
    def test_rejects_degenerate_shapes(self, t_h, t_f, l):
        with pytest.raises(ValueError):
            WindowConfig(t_h=t_h, t_f=t_f, l=l)


class TestFlatIndex:
    def test_documented_example(self):
        # t_h=5, t_f=3, L=60: the anchor subgraph starts at offset 5, so poi 2
        # of the anchor slot sits at 5*60 + 2 = 302
        w = WindowConfig(t_h=5, t_f=3, l=60)
        assert flat_index(10, 2, w, 10) == 302

    def test_corners(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        assert flat_index(10 - 5, 0, w, 10) == 0
        assert flat_index(10 + 3, 59, w, 10) == w.n_nodes - 1

    def test_out_of_window_slot(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        with pytest.raises(IndexError):
            flat_index(4, 0, w, 10)
        with pytest.raises(IndexError):
            flat_index(14, 0, w, 10)

    def test_out_of_range_poi(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        with pytest.raises(IndexError):
            flat_index(10, 60, w, 10)
        with pytest.raises(IndexError):
            flat_index(10, -1, w, 10)

    def test_round_trip_bijection(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            w = WindowConfig(
                t_h=int(rng.integers(1, 9)),
                t_f=int(rng.integers(1, 8)),
                l=int(rng.integers(1, 70)),
            )
            anchor = int(rng.integers(-50, 5000))
            seen = set()
            for tau in w.slots(anchor):
                for poi in range(w.l):
                    n = flat_index(tau, poi, w, anchor)
                    assert node_slot(n, w, anchor) == tau
                    assert node_poi(n, w) == poi
                    seen.add(n)
            assert seen == set(range(w.n_nodes))


class TestCarryIndex:
    def test_documented_examples(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        assert carry_index(0, w) == 60
        assert carry_index(479, w) == 539

    def test_undefined_exactly_on_last_subgraph(self):
        w = WindowConfig(t_h=5, t_f=3, l=60)
        defined = [n for n in range(w.n_nodes) if carry_index(n, w) is not None]
        assert defined == list(range(w.n_nodes - w.l))

    def test_injective_and_identity_preserving(self):
        # carried node keeps its (slot, poi) identity in the previous window
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = WindowConfig(
                t_h=int(rng.integers(1, 7)),
                t_f=int(rng.integers(1, 6)),
                l=int(rng.integers(1, 30)),
            )
            anchor = int(rng.integers(10, 100))
            images = []
            for n in range(w.n_nodes - w.l):
                m = carry_index(n, w)
                images.append(m)
                assert node_slot(n, w, anchor) == node_slot(m, w, anchor - 1)
                assert node_poi(n, w) == node_poi(m, w)
            assert len(set(images)) == len(images)

    def test_out_of_range(self):
        w = WindowConfig(t_h=1, t_f=1, l=2)
        with pytest.raises(IndexError):
            carry_index(6, w)


class TestValidate:
    def test_valid_graph_passes(self):
        make_graph(WindowConfig(t_h=1, t_f=1, l=3), anchor=5)

    def test_rejects_asymmetry(self):
        g = make_graph(WindowConfig(t_h=1, t_f=1, l=3), anchor=5)
        g.weights[0, 1] += 1e-9
        with pytest.raises(ValueError, match="symmetric"):
            validate(g)

    def test_rejects_nonzero_diagonal(self):
        g = make_graph(WindowConfig(t_h=1, t_f=1, l=3), anchor=5)
        g.weights[2, 2] = 0.5
        with pytest.raises(ValueError, match="diagonal"):
            validate(g)

    def test_rejects_weight_of_one(self):
        g = make_graph(WindowConfig(t_h=1, t_f=1, l=3), anchor=5)
        g.weights[0, 1] = 1.0
        g.weights[1, 0] = 1.0
        with pytest.raises(ValueError, match=r"\[0, 1\)"):
            validate(g)

    def test_rejects_stale_degrees(self):
        g = make_graph(WindowConfig(t_h=1, t_f=1, l=3), anchor=5)
        g.degrees = g.degrees + 0.1
        with pytest.raises(ValueError, match="degrees"):
            validate(g)

    def test_rejects_isolated_node(self):
        w = WindowConfig(t_h=1, t_f=1, l=2)
        n = w.n_nodes
        weights = np.zeros((n, n))
        weights[0, 1] = weights[1, 0] = 0.5
        weights[2, 3] = weights[3, 2] = 0.5
        weights[0, 2] = weights[2, 0] = 0.5
        weights[1, 3] = weights[3, 1] = 0.5
        # nodes 4, 5 isolated
        with pytest.raises(ValueError, match="isolated"):
            CorrelationGraph(
                anchor=5,
                window=w,
                weights=weights,
                degrees=weights.sum(axis=1),
                label_mask=np.zeros(n, dtype=bool),
                label_values=np.zeros(n),
            )

    def test_rejects_labels_in_future_subgraphs(self):
        w = WindowConfig(t_h=1, t_f=1, l=3)
        with pytest.raises(ValueError, match="future"):
            make_graph(w, anchor=5, labeled=(w.n_nodes - 1,))

    def test_rejects_nonfinite_label(self):
        w = WindowConfig(t_h=1, t_f=1, l=3)
        g = make_graph(w, anchor=5)
        g.label_values[0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            validate(g)


class TestLabelStore:
    def test_same_slot_same_poi_readings_average(self):
        store = LabelStore()
        store.add(4, 7, 10.0)
        store.add(4, 7, 20.0)
        store.add(4, 2, 5.0)
        assert store.labels_for_slot(4) == {7: 15.0, 2: 5.0}

    def test_prune_drops_old_slots(self, caplog):
        store = LabelStore()
        store.add(1, 0, 1.0)
        store.add(5, 0, 1.0)
        with caplog.at_level(logging.DEBUG):
            store.prune(3)
        assert store.slots() == [5]
        assert "slot 1" in caplog.text

    def test_copy_is_independent(self):
        store = LabelStore()
        store.add(1, 0, 1.0)
        dup = store.copy()
        dup.add(1, 0, 3.0)
        assert store.labels_for_slot(1) == {0: 1.0}
        assert dup.labels_for_slot(1) == {0: 2.0}

    def test_dict_round_trip(self):
        store = LabelStore()
        store.add(2, 1, 4.0)
        store.add(2, 1, 6.0)
        again = LabelStore.from_dict(store.to_dict())
        assert again.labels_for_slot(2) == {1: 5.0}


class TestRouteReadings:
    def setup_method(self):
        self.window = WindowConfig(t_h=2, t_f=1, l=4)
        self.sensors = {1: Sensor(1, 0), 2: Sensor(2, 3)}

    def test_routes_to_own_slot(self):
        store = LabelStore()
        route_readings(store, [Reading(1, 9, 4.0), Reading(2, 10, 8.0)],
                       self.sensors, anchor=10, window=self.window)
        assert store.labels_for_slot(9) == {0: 4.0}
        assert store.labels_for_slot(10) == {3: 8.0}

    def test_drops_and_logs_late_reading(self, caplog):
        store = LabelStore()
        with caplog.at_level(logging.WARNING):
            route_readings(store, [Reading(1, 7, 4.0)], self.sensors,
                           anchor=10, window=self.window)
        assert store.slots() == []
        assert "late reading" in caplog.text

    def test_rejects_future_reading(self):
        with pytest.raises(DataError, match="future"):
            route_readings(LabelStore(), [Reading(1, 11, 4.0)], self.sensors,
                           anchor=10, window=self.window)

    def test_rejects_unknown_sensor(self):
        with pytest.raises(DataError, match="unknown sensor"):
            route_readings(LabelStore(), [Reading(9, 10, 4.0)], self.sensors,
                           anchor=10, window=self.window)


class TestPrediction:
    def test_current_subgraph_slice(self):
        w = WindowConfig(t_h=1, t_f=1, l=2)
        pred = Prediction(anchor=3, window=w,
                          values=np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                          label_mask=np.zeros(6, dtype=bool))
        assert pred.current_subgraph().tolist() == [3.0, 4.0]
