"""Seeded experiment runner: generate, corrupt, select, identify, score.

An experiment file is TOML with the regular config sections plus::

    name = "switch-sm-count"
    task = "switch"          # switch | feeder | assign | phase
    metric = "accuracy"      # accuracy | purity
    seeds = [0, 1, 2, 3, 4]

    [sweep]
    parameter = "sm_count"
    values = [2, 10, 20, "all"]

    [compare]                # optional second axis
    parameter = "method"
    values = ["knn", "mfp"]

Sweep and compare parameters are either a short name from ``SHORT_NAMES``
or a dotted ``section.key`` of the config. The report has one row per
(compare, sweep) cell with the mean and sample SD over seeds.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lvtopo.assign import knn_assign, mfp_assign
from lvtopo.cluster import high_confidence_subset, identify_feeders, identify_phases
from lvtopo.config import (
    RunConfig,
    _line_of,
    build_config,
    derive_seed,
    parse_toml,
)
from lvtopo.correlate import distance_matrix
from lvtopo.errors import ConfigError
from lvtopo.metrics import aligned_accuracy, purity
from lvtopo.model import LabelSet, VoltagePanel
from lvtopo.selection import (
    balanced_sampling,
    select_time,
    snapshot_rows,
    uniform_sm_selection,
)
from lvtopo.switchid import ForestConfig, train_forest, train_gnb
from lvtopo.synth import SyntheticDataset, generate_dataset, inject_missing, inject_noise

TASKS = ("switch", "feeder", "assign", "phase")
METRICS = ("accuracy", "purity")
SHORT_NAMES = {
    "sm_count": "selection.max_sm_per_feeder",
    "missing_fraction": "profiles.missing_fraction",
    "noise_sd": "profiles.sm_noise_sd",
    "unknown_fraction": "pipeline.unknown_fraction",
    "k": "pipeline.k",
    "method": "pipeline.method",
    "time_filter": "selection.time_filter",
    "phase_mode": "network.phase_mode",
    "variant": "network.variant",
    "season": "profiles.season",
    "pv_penetration": "profiles.pv_penetration",
    "classifier": "pipeline.classifier",
    "high_confidence": "pipeline.high_confidence",
}
EXPERIMENT_KEYS = ("name", "task", "metric", "seeds", "unknown_fraction")


# ---------------------------------------------------------------------------
# Dataset construction shared with the CLI
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    data: SyntheticDataset
    panel: VoltagePanel          # after noise and missing-data injection
    seeds: dict[str, int]


def prepare_dataset(cfg: RunConfig) -> PreparedData:
    """Generate the synthetic dataset for ``cfg`` and apply its corruption."""
    seeds = {s: derive_seed(cfg.seed, s) for s in ("network", "noise", "missing")}
    sc = cfg.scenario
    data = generate_dataset(cfg.network, cfg.profiles, seed=seeds["network"],
                            switching=sc.switching, dwell_range=(sc.dwell_min, sc.dwell_max))
    panel = inject_noise(data.panel, sc.sm_noise_sd, seeds["noise"])
    if sc.missing_fraction > 0:
        panel = inject_missing(panel, sc.missing_fraction, sc.missing_mode, seeds["missing"])
    return PreparedData(data, panel, seeds)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


def _time_selected(panel: VoltagePanel, cfg: RunConfig) -> VoltagePanel:
    return select_time(panel, cfg.selection.window()) if cfg.selection.time_filter else panel


def score_switch(prep: PreparedData, cfg: RunConfig, metric: str) -> float:
    """Balanced sampling, seeded train/test split, classifier accuracy."""
    data = prep.data
    if data.switch_labels is None:
        raise ConfigError("switch task needs [network] switching = true")
    bar = data.topology.switch_bars[0]
    sub, _ = uniform_sm_selection(prep.panel, data.topology, bar, cfg.selection.max_sm_per_feeder)
    Xb, yb = balanced_sampling(snapshot_rows(sub), data.switch_labels,
                               derive_seed(cfg.seed, "balance"))
    n_train = int(round(cfg.pipeline.train_fraction * yb.size))
    if cfg.pipeline.classifier == "rf":
        fc = cfg.forest
        model = train_forest(Xb[:n_train], yb[:n_train],
                             ForestConfig(fc.tree_count, fc.max_depth, fc.min_leaf,
                                          fc.features_per_split, derive_seed(cfg.seed, "forest")))
    else:
        model = train_gnb(Xb[:n_train], yb[:n_train])
    return float(np.mean(model.predict(Xb[n_train:]) == yb[n_train:]))


def _score(pred: LabelSet, truth: LabelSet, metric: str) -> float:
    return aligned_accuracy(pred, truth) if metric == "accuracy" else purity(pred, truth)


def score_feeder(prep: PreparedData, cfg: RunConfig, metric: str, heatmap=None) -> float:
    panel = _time_selected(prep.panel, cfg)
    k = cfg.network.feeder_count
    res = identify_feeders(panel, k, cfg.correlation, fill_invalid=cfg.pipeline.fill_invalid)
    if heatmap is not None and res.distances is not None:
        heatmap(res.distances)
    truth = prep.data.feeder_truth()
    frac = cfg.pipeline.high_confidence
    if frac < 1.0:
        sub = high_confidence_subset(res, frac)
        keep = sub.known_ids()
        return _score(res.labels.restrict(keep), truth.restrict(keep), metric)
    return _score(res.labels, truth, metric)


def score_assign(prep: PreparedData, cfg: RunConfig, metric: str, unknown_fraction: float,
                 heatmap=None) -> float:
    panel = _time_selected(prep.panel, cfg)
    truth = prep.data.feeder_truth()
    ids = list(panel.meter_ids)
    rng = np.random.default_rng(derive_seed(cfg.seed, "unknown"))
    n_unknown = int(round(unknown_fraction * len(ids)))
    if n_unknown == 0:
        raise ConfigError(f"unknown_fraction {unknown_fraction} leaves no meter to assign")
    unknown = set(rng.choice(ids, size=n_unknown, replace=False).tolist())
    known = LabelSet(labels={m: truth.labels[m] for m in ids if m not in unknown},
                     known={m: m not in unknown for m in ids})
    method = cfg.pipeline.method if cfg.pipeline.method in ("knn", "mfp") else "mfp"
    if method == "knn":
        pred = knn_assign(panel, known, cfg.pipeline.k)
    else:
        pred = mfp_assign(panel, known, cfg.pipeline.k, cfg.correlation)
    if heatmap is not None:
        kind = "euclidean" if method == "knn" else "mfp"
        heatmap(distance_matrix(panel, kind, cfg.correlation, fill_invalid=True))
    # score only the meters whose label was withheld
    scored = sorted(unknown)
    return _score(pred.restrict(scored), truth.restrict(scored), metric)


def score_phase(prep: PreparedData, cfg: RunConfig, metric: str, heatmap=None) -> float:
    """Phase identification inside each true feeder; size-weighted mean."""
    panel = _time_selected(prep.panel, cfg)
    topo = prep.data.topology
    truth = prep.data.phase_truth()
    total = 0.0
    n = 0
    for f in sorted(fd.id for fd in topo.feeders):
        members = [m for m in panel.meter_ids if topo.meters[m].feeder == f]
        if len(members) < 3:
            continue
        sub = panel.select_rows(members)
        res = identify_phases(sub, 3, fill_invalid=cfg.pipeline.fill_invalid)
        if heatmap is not None and res.distances is not None:
            heatmap(res.distances)
        total += _score(res.labels, truth.restrict(members), metric) * len(members)
        n += len(members)
    return total / n


def run_task(task: str, cfg: RunConfig, metric: str = "accuracy",
             unknown_fraction: float = 0.1, heatmap=None) -> float:
    prep = prepare_dataset(cfg)
    if task == "switch":
        return score_switch(prep, cfg, metric)
    if task == "feeder":
        return score_feeder(prep, cfg, metric, heatmap)
    if task == "assign":
        return score_assign(prep, cfg, metric, unknown_fraction, heatmap)
    if task == "phase":
        return score_phase(prep, cfg, metric, heatmap)
    raise ConfigError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")


# ---------------------------------------------------------------------------
# Experiment files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Axis:
    parameter: str
    values: tuple

    @property
    def target(self) -> str:
        return SHORT_NAMES.get(self.parameter, self.parameter)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    task: str
    metric: str
    seeds: tuple[int, ...]
    base: dict
    sweep: Axis | None
    compare: Axis | None
    unknown_fraction: float = 0.1
    text: str = ""


def _axis(doc: dict, key: str, text: str) -> Axis | None:
    raw = doc.get(key)
    if raw is None:
        return None
    if not isinstance(raw, dict) or "parameter" not in raw or "values" not in raw:
        raise ConfigError(f"line {_line_of_section(text, key) or '?'}: [{key}] needs "
                          f"'parameter' and 'values'")
    extra = set(raw) - {"parameter", "values"}
    if extra:
        raise ConfigError(f"line {_line_of(text, sorted(extra)[0], key) or '?'}: "
                          f"unknown key {sorted(extra)[0]!r} in [{key}]")
    values = raw["values"]
    if not isinstance(values, list) or not values:
        raise ConfigError(f"line {_line_of(text, 'values', key) or '?'}: "
                          f"[{key}] values must be a non-empty list")
    return Axis(str(raw["parameter"]), tuple(values))


def _line_of_section(text: str, section: str) -> int | None:
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip().startswith("[") and line.strip().strip("[] ") == section:
            return no
    return None


def parse_experiment(text: str, source: str = "<experiment>") -> ExperimentSpec:
    doc = parse_toml(text, source)
    try:
        task = doc.get("task")
        if task not in TASKS:
            raise ConfigError(f"line {_line_of(text, 'task') or '?'}: task must be one of "
                              f"{', '.join(TASKS)}, got {task!r}")
        metric = doc.get("metric", "accuracy")
        if metric not in METRICS:
            raise ConfigError(f"line {_line_of(text, 'metric') or '?'}: metric must be one of "
                              f"{', '.join(METRICS)}")
        seeds = doc.get("seeds", [0])
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError(f"line {_line_of(text, 'seeds') or '?'}: seeds must be a "
                              f"non-empty list of integers")
        unknown_fraction = float(doc.get("unknown_fraction", 0.1))
        sweep = _axis(doc, "sweep", text)
        compare = _axis(doc, "compare", text)
        base = {k: v for k, v in doc.items()
                if k not in EXPERIMENT_KEYS and k not in ("sweep", "compare")}
        spec = ExperimentSpec(str(doc.get("name", "experiment")), task, metric, tuple(seeds),
                              base, sweep, compare, unknown_fraction, text)
        # validate every cell's configuration up front
        for cmp_v in (spec.compare.values if spec.compare else (None,)):
            for sw_v in (spec.sweep.values if spec.sweep else (None,)):
                _cell_config(spec, seeds[0], sw_v, cmp_v)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return spec


def _apply(overrides: dict, axis: Axis | None, value, spec: ExperimentSpec,
           section: str) -> float | None:
    """Record one axis value; returns an unknown_fraction override if that is the axis."""
    if axis is None:
        return None
    target = axis.target
    if target == "pipeline.unknown_fraction":
        return float(value)
    if "." not in target:
        raise ConfigError(f"line {_line_of(spec.text, 'parameter', section) or '?'}: unknown parameter "
                          f"{axis.parameter!r}; use a short name ({', '.join(SHORT_NAMES)}) "
                          f"or section.key")
    if target == "selection.max_sm_per_feeder" and value == "all":
        value = None
        overrides[target] = "__none__"
        return None
    overrides[target] = value
    return None


def _cell_config(spec: ExperimentSpec, seed: int, sweep_value, compare_value):
    overrides: dict = {}
    uf = spec.unknown_fraction
    for axis, value, section in ((spec.sweep, sweep_value, "sweep"),
                                 (spec.compare, compare_value, "compare")):
        got = _apply(overrides, axis, value, spec, section)
        if got is not None:
            uf = got
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in spec.base.items()}
    doc["seed"] = seed
    for dotted, value in overrides.items():
        section, key = dotted.split(".", 1)
        sec = doc.setdefault(section, {})
        if value == "__none__":
            sec.pop(key, None)
        else:
            sec[key] = value
    cfg = build_config(doc, spec.text)
    return cfg, uf


@dataclass
class ReportRow:
    compare: object
    sweep: object
    mean: float
    sd: float
    n: int
    values: tuple[float, ...]


@dataclass
class Report:
    spec: ExperimentSpec
    rows: list[ReportRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "task", "metric", "compare_parameter", "compare_value",
                    "sweep_parameter", "sweep_value", "mean", "sd", "n_seeds"])
        s = self.spec
        for r in self.rows:
            w.writerow([s.name, s.task, s.metric,
                        s.compare.parameter if s.compare else "", _cell(r.compare),
                        s.sweep.parameter if s.sweep else "", _cell(r.sweep),
                        f"{r.mean:.6f}", f"{r.sd:.6f}", r.n])
        return buf.getvalue()

    def summary(self) -> str:
        s = self.spec
        label = "aligned accuracy (optimal cluster-class matching)" if (
            s.metric == "accuracy" and s.task in ("feeder", "assign", "phase")) else s.metric
        lines = [f"experiment {s.name}: task={s.task} metric={label} seeds={len(s.seeds)}"]
        for r in self.rows:
            parts = []
            if s.compare:
                parts.append(f"{s.compare.parameter}={_cell(r.compare)}")
            if s.sweep:
                parts.append(f"{s.sweep.parameter}={_cell(r.sweep)}")
            where = " ".join(parts) or "(single cell)"
            lines.append(f"  {where}: {r.mean:.4f} +/- {r.sd:.4f}")
        return "\n".join(lines) + "\n"


def _cell(v) -> str:
    return "" if v is None else str(v)


def run_experiment(spec: ExperimentSpec, threads: int = 1, heatmap_dir=None) -> Report:
    """Evaluate every (compare, sweep, seed) cell; rows follow spec order."""
    cells = []
    for cmp_v in (spec.compare.values if spec.compare else (None,)):
        for sw_v in (spec.sweep.values if spec.sweep else (None,)):
            for seed in spec.seeds:
                cells.append((cmp_v, sw_v, seed))

    def one(cell):
        cmp_v, sw_v, seed = cell
        cfg, uf = _cell_config(spec, seed, sw_v, cmp_v)
        dump = None
        if heatmap_dir is not None:
            tag = f"{spec.name}_c{_cell(cmp_v)}_s{_cell(sw_v)}_seed{seed}".replace("/", "-")
            counter = iter(range(1000))

            def dump(D, tag=tag, counter=counter):
                Path(heatmap_dir).mkdir(parents=True, exist_ok=True)
                D.to_csv(Path(heatmap_dir) / f"{tag}_{next(counter)}_{D.kind}.csv")
        return run_task(spec.task, cfg, spec.metric, uf, dump)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one, cells))
    else:
        scores = [one(c) for c in cells]

    rows = []
    i = 0
    for cmp_v in (spec.compare.values if spec.compare else (None,)):
        for sw_v in (spec.sweep.values if spec.sweep else (None,)):
            vals = tuple(scores[i: i + len(spec.seeds)])
            i += len(spec.seeds)
            sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            rows.append(ReportRow(cmp_v, sw_v, float(np.mean(vals)), sd, len(vals), vals))
    return Report(spec, rows)


def load_experiment(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read experiment file {path}: {exc}") from exc
    return parse_experiment(text, str(path))
