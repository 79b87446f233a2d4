import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel, random_radial, two_bus
from lvtopo.errors import DataError, PowerFlowError
from lvtopo.model import Line, SwitchBar, validate_topology
from lvtopo.synth import (
    NetworkTemplate,
    ProfileConfig,
    build_network,
    generate_dataset,
    inject_missing,
    inject_noise,
    schedule_switch_states,
    solve_power_flow,
    topology_for_state,
)


def depth_and_branches(topo, feeder):
    parent = {ln.to_node: ln.from_node for ln in topo.lines}
    nodes = [n.id for n in topo.nodes if n.feeder == feeder]
    children = Counter(parent[n] for n in nodes)
    depth = 0
    for n in nodes:
        d, cur = 0, n
        while cur in parent:
            cur = parent[cur]
            d += 1
        depth = max(depth, d)
    # laterals: every child beyond the first at a fork
    return depth, sum(children.get(n, 0) - 1 for n in nodes if children.get(n, 0) > 1)


def two_bus_closed_form(v_s, p, q, r, x):
    """|V| at the load bus of a source-line-load circuit with constant S = P + jQ."""
    b = v_s**2 - 2 * (p * r + q * x)
    return math.sqrt((b + math.sqrt(b * b - 4 * (p * p + q * q) * (r * r + x * x))) / 2)


class TestBuildNetwork:
    def test_sn_shape(self):
        sn = build_network(NetworkTemplate("SN", 2, customers_per_feeder=49), 0)
        cn = build_network(NetworkTemplate("CN1", 2, customers_per_feeder=49), 0)
        assert validate_topology(sn) == []
        assert sorted(Counter(m.feeder for m in sn.meters.values()).values()) == [49, 49]
        for f in ("F1", "F2"):
            assert depth_and_branches(sn, f)[0] <= depth_and_branches(cn, f)[0]

    def test_deterministic(self):
        t = NetworkTemplate("CN1", 2)
        assert build_network(t, 5) == build_network(t, 5)

    @pytest.mark.parametrize("connection", ["single", "multiple"])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_snb_has_more_branches(self, connection, seed):
        sn = build_network(NetworkTemplate("SN", 2, per_node_connection=connection), seed)
        snb = build_network(NetworkTemplate("SNB", 2, per_node_connection=connection), seed)
        for f in ("F1", "F2"):
            assert depth_and_branches(snb, f)[1] > depth_and_branches(sn, f)[1]

    def test_complex_feeders_longer_and_deeper(self):
        cn2 = build_network(NetworkTemplate("CN2", 3), 2)
        simple_d = depth_and_branches(cn2, "F1")[0]
        far = {f: max(n.distance_m for n in cn2.nodes if n.feeder == f) for f in ("F1", "F2")}
        assert far["F2"] > far["F1"]
        assert depth_and_branches(cn2, "F2")[0] >= simple_d

    def test_multiple_connection(self):
        topo = build_network(NetworkTemplate("CN1", 2, per_node_connection="multiple"), 3)
        per_node = Counter(m.node for m in topo.meters.values())
        assert all(2 <= c <= 6 for c in per_node.values())
        assert {n.connection_count for n in topo.nodes} <= set(range(2, 7))

    def test_three_phase_non_uniform(self):
        topo = build_network(NetworkTemplate("CN1", 2, phase_mode="three-phase non-uniform"), 4)
        for f in ("F1", "F2"):
            c = Counter(m.phase for m in topo.meters.values() if m.feeder == f)
            counts = sorted(c[p] for p in "ABC")
            for lo, hi in zip(counts, counts[1:]):
                assert hi - lo >= 0.2 * hi

    def test_invalid_variant(self):
        with pytest.raises(DataError, match="CN1, CN2, SN, SNL, SNB"):
            NetworkTemplate("CN7")


class TestPowerFlow:
    def test_zero_injection_is_flat(self):
        topo = build_network(NetworkTemplate("CN1", 2, customers_per_feeder=10), 0)
        n = len(topo.meters)
        p = solve_power_flow(topo, np.zeros((n, 5)))
        assert np.all(p.values == 230.0)

    @pytest.mark.parametrize("p_kw, pf, r, x", [(5.0, 1.0, 0.05, 0.02), (12.0, 0.95, 0.1, 0.08),
                                                (-4.0, 1.0, 0.2, 0.05)])
    def test_two_bus_closed_form(self, p_kw, pf, r, x):
        topo = two_bus(r, x)
        loads = np.array([[max(p_kw, 0.0)]])
        pv = np.array([[max(-p_kw, 0.0)]])
        got = solve_power_flow(topo, loads, pv, power_factor=pf).values[0, 0]
        p = 1000 * p_kw
        q = 1000 * max(p_kw, 0.0) * math.tan(math.acos(pf))
        want = two_bus_closed_form(230.0, p, q, r, x)
        assert abs(got - want) / want < 1e-8

    def test_phase_symmetry(self):
        topo = build_network(NetworkTemplate("SN", 1, customers_per_feeder=6), 0)
        ids = list(topo.meters)
        meters = dict(topo.meters)
        # mirror every A meter onto phase B at the same node
        for mid in ids:
            meters[mid] = replace(meters[mid], phase="A")
            meters[mid + "b"] = replace(meters[mid], phase="B")
        sym = topo.replace(meters=meters)
        loads = np.tile(np.linspace(0.5, 3, 6)[:, None], (2, 4))
        p = solve_power_flow(sym, loads)
        row = p.row_of
        for mid in ids:
            np.testing.assert_allclose(p.values[row[mid]], p.values[row[mid + "b"]], rtol=0, atol=1e-9)

    def test_rejects_non_radial(self):
        topo = two_bus()
        bad = topo.replace(lines=topo.lines + (Line("N1", "N1", (0.1,) * 3, (0.0,) * 3),))
        with pytest.raises(PowerFlowError, match="non-radial"):
            solve_power_flow(bad, np.ones((1, 1)))

    def test_non_convergence_names_node(self):
        with pytest.raises(PowerFlowError, match="worst node"):
            solve_power_flow(two_bus(5.0, 5.0), np.array([[500.0]]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_more_load_never_raises_voltage(self, seed):
        rng = np.random.default_rng(seed)
        topo = random_radial(rng, int(rng.integers(2, 15)), int(rng.integers(1, 20)))
        n = len(topo.meters)
        loads = rng.uniform(0, 3, (n, 1))
        pv = rng.uniform(0, 2, (n, 1))
        i = int(rng.integers(n))
        bumped = loads.copy()
        bumped[i] += rng.uniform(0.1, 2)
        v0 = solve_power_flow(topo, loads, pv).values[:, 0]
        v1 = solve_power_flow(topo, bumped, pv).values[:, 0]
        phase = topo.meters[list(topo.meters)[i]].phase
        same = np.array([m.phase == phase for m in topo.meters.values()])
        assert np.all(v1[same] <= v0[same] + 1e-9)


def test_default_profiles_stay_in_band():
    for variant, mode in (("CN1", "single-phase"), ("SNL", "three-phase non-uniform")):
        for season in ("winter", "summer"):
            ds = generate_dataset(NetworkTemplate(variant, 2, phase_mode=mode),
                                  ProfileConfig(days=3, season=season, pv_penetration=0.5), seed=1)
            pu = ds.panel.values / 230.0
            assert pu.min() >= 0.85 and pu.max() <= 1.15


class TestCorruption:
    def test_missing_zero_is_identity(self):
        p = make_panel(np.full((10, 100), 230.0))
        assert np.array_equal(inject_missing(p, 0.0, rng_seed=1).mask, p.mask)

    def test_missing_exact_count(self):
        p = make_panel(np.full((10, 100), 230.0))
        q = inject_missing(p, 0.5, "random_points", 3)
        assert (~q.mask).sum() == 500
        assert np.array_equal(q.values, p.values)

    def test_missing_whole_meters(self):
        p = make_panel(np.full((10, 20), 230.0))
        q = inject_missing(p, 0.35, "whole_meters", 3)
        assert (~q.mask.any(axis=1)).sum() == 3 and q.mask.any(axis=1).sum() == 7

    def test_missing_deterministic(self):
        p = make_panel(np.full((10, 100), 230.0))
        assert np.array_equal(inject_missing(p, 0.3, rng_seed=8).mask,
                              inject_missing(p, 0.3, rng_seed=8).mask)

    def test_noise_zero_identity(self):
        p = make_panel(np.full((3, 10), 230.0))
        assert inject_noise(p, 0.0, 1) is p

    def test_noise_mean(self):
        p = make_panel(np.full((20, 500), 230.0))
        q = inject_noise(p, 0.1, 2)
        # 4-sigma band for the mean of N*T draws
        assert abs(q.values.mean() - 230.0) < 4 * 0.1 / math.sqrt(q.values.size)

    def test_noise_skips_masked(self):
        mask = np.ones((3, 10), bool)
        mask[0, :5] = False
        p = make_panel(np.full((3, 10), 230.0), mask)
        q = inject_noise(p, 1.0, 3)
        assert np.all(q.values[~mask] == 230.0)
        assert np.all(q.values[mask] != 230.0)


class TestSchedule:
    bar = SwitchBar("B1", 3, ("F1", "F2", "F3"), ((1, 1, 0), (1, 0, 1), (0, 1, 1)))

    def test_labels_in_catalog(self):
        s = schedule_switch_states(self.bar, 10, (10, 50), 0)
        assert set(s.tolist()) <= {0, 1, 2} and s.size == 960

    def test_fixed_daily_dwell(self):
        s = schedule_switch_states(self.bar, 10, (96, 96), 0)
        changes = np.flatnonzero(np.diff(s)) + 1
        assert changes.tolist() == [96 * d for d in range(1, 10)]

    def test_biased_weights(self):
        s = schedule_switch_states(self.bar, 100, (96, 96), 1, weights=(0.8, 0.1, 0.1))
        assert abs(np.mean(s == 0) - 0.8) <= 0.05

    def test_open_switch_reroutes_to_backup(self):
        topo = build_network(NetworkTemplate("CN1", 3, customers_per_feeder=5), 0)
        bar = topo.switch_bars[0]
        sub = topology_for_state(topo, bar, (1, 0, 1))
        roots = {f.id: f.transformer for f in sub.feeders}
        assert roots["F2"] == "TB2" and roots["F1"] == "T1" and roots["F3"] == "T3"
        assert validate_topology(sub) == []


def test_dataset_determinism():
    t = NetworkTemplate("CN1", 2, customers_per_feeder=8)
    a = generate_dataset(t, ProfileConfig(days=2), seed=4)
    b = generate_dataset(t, ProfileConfig(days=2), seed=4)
    assert np.array_equal(a.panel.values, b.panel.values)
