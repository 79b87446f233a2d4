"""Acceptance criteria on seeded synthetic data.

Each test prints one ``PASS``/``FAIL`` line with the measured values, then
asserts. Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py`` for just the summary lines.
"""

import json
import math
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np

from conftest import random_radial, two_bus
from lvtopo.cli import main as cli_main
from lvtopo.cluster import complete_linkage, cut_linkage
from lvtopo.config import build_config
from lvtopo.correlate import CorrelationConfig, fpcc, mfp, mfp_from_rho, pcc
from lvtopo.experiment import prepare_dataset, score_assign, score_feeder, score_phase, score_switch
from lvtopo.metrics import aligned_accuracy, purity
from lvtopo.model import LabelSet
from lvtopo.synth import solve_power_flow
from test_cluster import brute_force_complete, partition, random_distances
from test_metrics import SIX, labels
from test_synth import two_bus_closed_form

SUITE_START = time.perf_counter()


def report(number: int, ok: bool, detail: str, capsys=None) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


def config(doc: dict, seed: int, **overrides):
    return build_config({**doc, "seed": seed}, overrides=overrides)


# ---------------------------------------------------------------------------
# 1-2: switch-state identification
# ---------------------------------------------------------------------------

SWITCH_DOC = {
    "network": {"variant": "CN1", "feeder_count": 3, "customers_per_feeder": 49,
                "shared_bus": True, "phase_mode": "three-phase non-uniform",
                "switching": True, "dwell_min": 96, "dwell_max": 288},
    "profiles": {"days": 60, "sm_noise_sd": 1.0},
    "forest": {"tree_count": 100},
}
SWITCH_SEEDS = range(5)


@lru_cache(maxsize=None)
def switch_data(seed: int, missing: float):
    cfg = config(SWITCH_DOC, seed, **{"profiles.missing_fraction": missing})
    return cfg, prepare_dataset(cfg)


@lru_cache(maxsize=None)
def switch_accuracy(seed: int, sm: int | None, missing: float) -> float:
    cfg, prep = switch_data(seed, missing)
    cfg = replace(cfg, selection=replace(cfg.selection, max_sm_per_feeder=sm))
    return score_switch(prep, cfg, "accuracy")


def criterion_1():
    t0 = time.perf_counter()
    full = np.mean([switch_accuracy(s, None, 0.0) for s in SWITCH_SEEDS])
    two = np.mean([switch_accuracy(s, 2, 0.0) for s in SWITCH_SEEDS])
    elapsed = time.perf_counter() - t0
    ok = full >= 0.90 and full > two and elapsed < 120
    return ok, f"RF accuracy all SMs {full:.4f} vs 2 SMs {two:.4f} (need >= 0.90 and greater), {elapsed:.0f} s (need < 120 s)"


def criterion_2():
    drops = {}
    for sm in (10, None):
        clean = np.mean([switch_accuracy(s, sm, 0.0) for s in SWITCH_SEEDS])
        holey = np.mean([switch_accuracy(s, sm, 0.4) for s in SWITCH_SEEDS])
        drops[sm or "all"] = (clean, holey, 100 * (clean - holey))
    ok = all(d <= 10 for _, _, d in drops.values())
    detail = "; ".join(f"{k} SMs/feeder {c:.4f} -> {h:.4f} at 40% missing (drop {d:.1f} pp)"
                       for k, (c, h, d) in drops.items())
    return ok, detail + " (need drop <= 10 pp)"


# ---------------------------------------------------------------------------
# 3-5: feeder and phase identification
# ---------------------------------------------------------------------------

def feeder_doc(mode):
    return {"network": {"variant": "CN1", "feeder_count": 2, "phase_mode": mode,
                        "switch_bar": False},
            "profiles": {"days": 14}}


def criterion_3():
    single, three = [], []
    for s in range(20):
        for mode, out in (("single-phase", single), ("three-phase non-uniform", three)):
            cfg = config(feeder_doc(mode), s)
            out.append(score_feeder(prepare_dataset(cfg), cfg, "accuracy"))
    single, three = np.array(single), np.array(three)
    perfect = int(np.sum(single == 1.0))
    lower = int(np.sum(three < single))
    ok = perfect >= 18 and lower >= 18
    return ok, (f"single-phase accuracy 1.00 on {perfect}/20 seeds (need >= 18); three-phase "
                f"lower on {lower}/20 (need >= 18); means {single.mean():.4f} / {three.mean():.4f}")


def criterion_4():
    acc = {}
    for uf, k in ((0.1, 1), (0.5, 8)):
        for method in ("knn", "mfp"):
            vals = []
            for s in range(20):
                cfg = config(feeder_doc("single-phase"), s,
                             **{"pipeline.method": method, "pipeline.k": k})
                vals.append(score_assign(prepare_dataset(cfg), cfg, "accuracy", uf))
            acc[uf, method] = float(np.mean(vals))
    ok = (acc[0.1, "knn"] >= 0.95 and acc[0.1, "mfp"] >= 0.95
          and acc[0.5, "mfp"] >= acc[0.5, "knn"])
    return ok, (f"10% unknown k=1: knn {acc[0.1, 'knn']:.4f}, mfp {acc[0.1, 'mfp']:.4f} "
                f"(need >= 0.95); 50% unknown k=8: mfp {acc[0.5, 'mfp']:.4f} vs knn "
                f"{acc[0.5, 'knn']:.4f} (need mfp >= knn)")


def criterion_5():
    means = {}
    for season, pv in (("summer", 0.5), ("winter", 0.0)):
        doc = {"network": {"variant": "CN1", "feeder_count": 1,
                           "phase_mode": "three-phase non-uniform", "switch_bar": False},
               "profiles": {"days": 14, "season": season, "pv_penetration": pv}}
        for filt in (False, True):
            vals = []
            for s in range(10):
                cfg = config(doc, s, **{"selection.time_filter": filt})
                vals.append(score_phase(prepare_dataset(cfg), cfg, "purity"))
            means[season, filt] = float(np.mean(vals))
    ok = (means["summer", True] >= 0.95 and means["summer", True] > means["summer", False]
          and means["winter", True] >= 0.95 and means["winter", False] >= 0.95)
    return ok, (f"summer PV purity filtered {means['summer', True]:.4f} vs unfiltered "
                f"{means['summer', False]:.4f} (need >= 0.95 and greater); winter "
                f"{means['winter', True]:.4f} / {means['winter', False]:.4f} (need >= 0.95)")


# ---------------------------------------------------------------------------
# 6-9: oracle and property checks
# ---------------------------------------------------------------------------

def criterion_6():
    rng = np.random.default_rng(6)
    cfg = CorrelationConfig()
    bad = []
    for i in range(10_000):
        t = int(rng.integers(16, 200))
        x = rng.normal(size=t)
        w = rng.uniform(-1, 1)
        y = w * x + math.sqrt(1 - w * w) * rng.normal(size=t)
        m_xy, m_yx = mfp(x, y), mfp(y, x)
        if not 0.0 <= m_xy < 1.0:
            bad.append(f"pair {i}: mfp {m_xy} outside [0, 1)")
        if abs(m_xy - m_yx) > 1e-12:
            bad.append(f"pair {i}: asymmetric")
        if pcc(x, x) != 1.0:
            bad.append(f"pair {i}: pcc(x, x) = {pcc(x, x)}")
        # sweep rho around the observed value
        r = pcc(x, y)
        grid = np.sort(np.clip(r + rng.uniform(-0.5, 0.5, 8), -0.999, 1.0))
        grid = np.unique(grid)
        if np.any(np.diff(mfp_from_rho(grid, cfg)) > 0):
            bad.append(f"pair {i}: mfp increases along rho")
        if np.any(np.diff(fpcc(grid, cfg)) <= 0):
            bad.append(f"pair {i}: fpcc not strictly increasing")
    return not bad, f"10000 pairs, {len(bad)} violations" + (f" (first: {bad[0]})" if bad else "")


def criterion_7():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        d = random_distances(rng, n, ties=bool(rng.integers(2)))
        k = int(rng.integers(1, n + 1))
        want, _ = brute_force_complete(d, k)
        mismatches += partition(cut_linkage(complete_linkage(d), n, k)) != want
    return mismatches == 0, f"200 matrices (N <= 12), {mismatches} partition mismatches vs brute force"


def criterion_8():
    worst = 0.0
    for p_kw, pf, r, x in ((5.0, 1.0, 0.05, 0.02), (12.0, 0.95, 0.1, 0.08), (-4.0, 1.0, 0.2, 0.05),
                           (30.0, 0.9, 0.02, 0.01)):
        got = solve_power_flow(two_bus(r, x), np.array([[max(p_kw, 0.0)]]),
                               np.array([[max(-p_kw, 0.0)]]), power_factor=pf).values[0, 0]
        q = 1000 * max(p_kw, 0.0) * math.tan(math.acos(pf))
        want = two_bus_closed_form(230.0, 1000 * p_kw, q, r, x)
        worst = max(worst, abs(got - want) / want)
    rng = np.random.default_rng(8)
    flat = True
    monotone = 0
    for _ in range(50):
        topo = random_radial(rng, int(rng.integers(2, 15)), int(rng.integers(1, 20)))
        n = len(topo.meters)
        flat &= bool(np.all(solve_power_flow(topo, np.zeros((n, 2))).values == 230.0))
        loads = rng.uniform(0, 3, (n, 1))
        pv = rng.uniform(0, 2, (n, 1))
        i = int(rng.integers(n))
        bumped = loads.copy()
        bumped[i] += rng.uniform(0.1, 2)
        v0 = solve_power_flow(topo, loads, pv).values[:, 0]
        v1 = solve_power_flow(topo, bumped, pv).values[:, 0]
        phase = list(topo.meters.values())[i].phase
        same = np.array([m.phase == phase for m in topo.meters.values()])
        monotone += bool(np.all(v1[same] <= v0[same] + 1e-9))
    ok = worst < 1e-8 and flat and monotone == 50
    return ok, (f"two-bus max relative error {worst:.2e} (need < 1e-8); zero injection flat: "
                f"{flat}; monotone on {monotone}/50 random radial networks")


def criterion_9():
    violations = 0
    for p in SIX:
        for t in SIX:
            pu, acc = purity(labels(p), labels(t)), aligned_accuracy(labels(p), labels(t))
            violations += acc > pu + 1e-12
            violations += (acc == 1.0) != (p == t)
    return violations == 0, f"{len(SIX)}x{len(SIX)} partition pairs of 6 elements, {violations} violations"


# ---------------------------------------------------------------------------
# 10: determinism and total runtime
# ---------------------------------------------------------------------------

def criterion_10(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        "seed = 21\n[network]\nfeeder_count = 3\nphase_mode = 'three-phase non-uniform'\n"
        "switching = true\n[profiles]\ndays = 14\nsm_noise_sd = 0.5\nmissing_fraction = 0.1\n"
        "[forest]\ntree_count = 30\n")
    cli_main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")])
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli_main(["pipeline", str(tmp_path / "d" / "manifest.json"), "--out", str(out)])
        runs.append((rc, {p.name: p.read_bytes() for p in sorted(out.iterdir())}))
    identical = runs[0] == runs[1] and runs[0][0] == 0
    stages = json.loads(runs[0][1]["report.json"])["completed"]
    elapsed = time.perf_counter() - SUITE_START
    ok = identical and stages == ["switch", "feeder", "phase"] and elapsed < 600
    return ok, (f"pipeline outputs byte-identical: {identical} ({len(runs[0][1])} files); "
                f"acceptance suite elapsed {elapsed:.0f} s (need < 600 s)")


# ---------------------------------------------------------------------------


def check(number, capsys, *args):
    ok, detail = globals()[f"criterion_{number}"](*args)
    report(number, ok, detail, capsys)
    assert ok, detail


def test_criterion_1_switch_trend(capsys):
    check(1, capsys)


def test_criterion_2_switch_missing(capsys):
    check(2, capsys)


def test_criterion_3_feeders_without_recordings(capsys):
    check(3, capsys)


def test_criterion_4_assignment(capsys):
    check(4, capsys)


def test_criterion_5_phase_time_filter(capsys):
    check(5, capsys)


def test_criterion_6_kernel_invariants(capsys):
    check(6, capsys)


def test_criterion_7_clustering_oracle(capsys):
    check(7, capsys)


def test_criterion_8_power_flow_oracle(capsys):
    check(8, capsys)


def test_criterion_9_metric_identities(capsys):
    check(9, capsys)


def test_criterion_10_determinism(capsys, tmp_path):
    check(10, capsys, tmp_path)


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for n in range(1, 11):
        args = (Path(tempfile.mkdtemp()),) if n == 10 else ()
        ok, detail = globals()[f"criterion_{n}"](*args)
        report(n, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
