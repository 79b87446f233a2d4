from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from lvtopo.errors import DataError, EmptySelectionError
from lvtopo.model import Feeder, Meter, NetworkTopology, Node, SwitchBar, Transformer
from lvtopo.selection import (
    TimeWindow,
    assemble_training_matrix,
    balanced_sampling,
    select_time,
    uniform_sm_selection,
    znormalize,
)


def day_panel(days=1, n=2):
    return make_panel(np.full((n, 96 * days), 230.0), start=datetime(2024, 1, 1))


class TestSelectTime:
    def test_outside_default_window(self):
        out = select_time(day_panel(2), TimeWindow("fixed", 20, 88, "outside"))
        assert out.n_steps == 2 * 27
        idx = out.within_day_index()[:27]
        assert list(idx) == list(range(20)) + list(range(89, 96))

    def test_inside_full_day_identity(self):
        p = day_panel()
        out = select_time(p, TimeWindow("fixed", 0, 95, "inside"))
        assert np.array_equal(out.values, p.values) and np.array_equal(out.steps, p.steps)

    def test_dynamic_pv_zero_identity(self):
        p = day_panel()
        w = TimeWindow("dynamic", pv_ref=np.zeros(96), load_ref=np.ones(96))
        assert select_time(p, w).n_steps == 96

    def test_empty_selection(self):
        with pytest.raises(EmptySelectionError, match="empty selection"):
            select_time(day_panel(), TimeWindow("fixed", 0, 95, "outside"))

    def test_window_validation(self):
        with pytest.raises(DataError):
            TimeWindow("fixed", 30, 20)
        with pytest.raises(DataError):
            select_time(day_panel(), TimeWindow("fixed", 20, 96))

    @given(st.integers(0, 95), st.integers(0, 95), st.sampled_from(["inside", "outside"]))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, a, b, sense):
        w = TimeWindow("fixed", min(a, b), max(a, b), sense)
        try:
            once = select_time(day_panel(2), w)
        except EmptySelectionError:
            return
        twice = select_time(once, w)
        assert np.array_equal(once.steps, twice.steps)


def bar_topology(counts):
    nodes, meters, feeders = [], {}, []
    for k, c in enumerate(counts):
        fid = f"F{k + 1}"
        feeders.append(Feeder(fid, "T1"))
        for j in range(c):
            nodes.append(Node(f"{fid}-n{j}", fid, 10.0 * (c - j)))  # later nodes closer
            meters[f"{fid}-m{j}"] = Meter(f"{fid}-n{j}", "A", fid)
    bar = SwitchBar("B1", len(counts), tuple(f.id for f in feeders),
                    ((1,) * len(counts),))
    topo = NetworkTopology((Transformer("T1"),), tuple(feeders), tuple(nodes), (), meters, (bar,))
    panel = make_panel(np.full((len(meters), 4), 230.0), ids=list(meters))
    return topo, bar, panel


class TestUniformSelection:
    def test_min_count(self):
        topo, bar, panel = bar_topology([5, 3, 7])
        sub, chosen = uniform_sm_selection(panel, topo, bar)
        assert sub.n_meters == 9
        # closest to the bar first, feeder blocks in id order
        assert chosen[:3] == ["F1-m4", "F1-m3", "F1-m2"]
        assert [m.split("-")[0] for m in chosen] == ["F1"] * 3 + ["F2"] * 3 + ["F3"] * 3

    def test_equal_counts_keep_all(self):
        topo, bar, panel = bar_topology([4, 4])
        assert uniform_sm_selection(panel, topo, bar)[0].n_meters == 8

    def test_two_by_two(self):
        topo, bar, panel = bar_topology([2, 2])
        assert uniform_sm_selection(panel, topo, bar)[0].n_meters == 4

    def test_feeder_without_data(self):
        topo, bar, panel = bar_topology([2, 2])
        mask = np.ones_like(panel.mask)
        mask[2:] = False
        with pytest.raises(DataError, match="F2"):
            uniform_sm_selection(panel.replace(mask=mask), topo, bar)

    def test_cap(self):
        topo, bar, panel = bar_topology([5, 6])
        assert uniform_sm_selection(panel, topo, bar, max_per_feeder=2)[0].n_meters == 4


class TestBalancedSampling:
    def test_counts(self, rng):
        y = np.repeat([0, 1, 2], [120, 80, 95])
        X = rng.normal(size=(y.size, 3))
        Xb, yb = balanced_sampling(X, y, 1)
        assert yb.size == 240
        assert np.all(np.bincount(yb) == 80)

    def test_balanced_input_is_permutation(self, rng):
        y = np.repeat([0, 1], 50)
        X = np.arange(100.0)[:, None]
        Xb, _ = balanced_sampling(X, y, 2)
        assert sorted(Xb[:, 0]) == list(range(100))

    def test_deterministic(self, rng):
        y = rng.integers(0, 3, 200)
        X = rng.normal(size=(200, 2))
        a = balanced_sampling(X, y, 7)
        b = balanced_sampling(X, y, 7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_missing_class(self):
        with pytest.raises(DataError):
            balanced_sampling(np.zeros((3, 1)), np.array([0, 0, 1]), 0, classes=[0, 1, 2])


class TestTrainingMatrix:
    def test_layout(self):
        V, y = assemble_training_matrix({0: [[1, 2, 3, 4]], 1: [[5, 6, 7, 8]]})
        assert V.shape == (2, 4) and list(y) == [0, 1]

    def test_single_class(self):
        V, y = assemble_training_matrix({3: [[1, 2], [3, 4]]})
        assert V.shape == (2, 2) and set(y) == {3}

    def test_errors(self):
        with pytest.raises(DataError):
            assemble_training_matrix({})
        with pytest.raises(DataError):
            assemble_training_matrix({0: [[1, 2]], 1: [[1, 2, 3]]})


class TestZnormalize:
    def test_population_convention(self):
        z, flags = znormalize(make_panel([[229.0], [230.0], [231.0]]))
        np.testing.assert_allclose(z.values[:, 0], np.array([-1, 0, 1]) * np.sqrt(1.5))
        assert not flags[0]

    def test_constant_column_flagged(self):
        z, flags = znormalize(make_panel([[230.0, 1.0], [230.0, 2.0]]))
        assert flags.tolist() == [True, False]
        assert np.all(z.values[:, 0] == 0)

    def test_standardised_column_unchanged(self):
        col = np.array([-1.0, 1.0, -1.0, 1.0])
        z, _ = znormalize(make_panel(col[:, None] + 0, normalized=True))
        np.testing.assert_allclose(z.values[:, 0], col, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_moments(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(230, 2, (8, 20))
        m = rng.random((8, 20)) > 0.2
        z, flags = znormalize(make_panel(v, m))
        for t in np.flatnonzero(~flags):
            col = z.values[m[:, t], t]
            assert abs(col.mean()) < 1e-9 and abs(col.std() - 1) < 1e-9
        assert np.array_equal(z.mask, m)
