"""The three-stage correction run: switch states, user-feeder links, phases.

Stages run in that fixed order; the phase stage works inside the feeder
groups found by the feeder stage. Every failure is re-raised as a
``StageError`` naming the stage, carrying the outputs finished so far.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from lvtopo.assign import knn_assign, mfp_assign
from lvtopo.cluster import (
    ClusteringResult,
    high_confidence_subset,
    identify_feeders,
    identify_phases,
)
from lvtopo.config import RunConfig, derive_seed
from lvtopo.errors import DataError, LvtopoError
from lvtopo.metrics import aligned_accuracy, purity
from lvtopo.model import PHASES, LabelSet, NetworkTopology, VoltagePanel, read_panel_csv
from lvtopo.selection import balanced_sampling, select_time, snapshot_rows, uniform_sm_selection
from lvtopo.switchid import ForestConfig, train_forest, train_gnb

STAGES = ("switch", "feeder", "phase")


class StageError(LvtopoError):
    def __init__(self, stage: str, cause: Exception, partial: PipelineResult | None = None):
        self.stage = stage
        self.cause = cause
        self.partial = partial
        super().__init__(f"[stage {stage}] {cause}")


@dataclass
class Dataset:
    """Files of one dataset directory, as listed by its manifest."""

    topology: NetworkTopology
    panel: VoltagePanel
    feeder_truth: LabelSet | None = None
    phase_truth: LabelSet | None = None
    switch_truth: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)


def read_switch_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["label"]) for r in rows], dtype=int)


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    files = manifest.get("files", {})
    for key in ("topology", "voltages"):
        if key not in files:
            raise DataError(f"{manifest_path}: manifest lists no {key} file")

    def opt(key, loader):
        name = files.get(key)
        return loader(base / name) if name and (base / name).exists() else None

    truth_sw = opt("switch_labels", read_switch_labels)
    if truth_sw is not None and truth_sw.size == 0:
        truth_sw = None
    return Dataset(
        topology=NetworkTopology.load(base / files["topology"]),
        panel=read_panel_csv(base / files["voltages"]),
        feeder_truth=opt("feeder_labels", LabelSet.load),
        phase_truth=opt("phase_labels", LabelSet.load),
        switch_truth=truth_sw,
        manifest=manifest,
    )


@dataclass
class PipelineResult:
    switch_pred: np.ndarray | None = None        # per held-out timestep
    switch_columns: np.ndarray | None = None     # their column indices
    switch_state: tuple[int, ...] | None = None  # state at the last timestep
    feeders: LabelSet | None = None
    phases: LabelSet | None = None
    metrics: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    completed: list[str] = field(default_factory=list)

    def report_lines(self) -> list[str]:
        lines = []
        for stage in STAGES:
            m = self.metrics.get(stage)
            if m is None:
                status = "done" if stage in self.completed else "not run"
                lines.append(f"{stage}: {status}")
                continue
            parts = [f"{k}={_fmt(v)}" for k, v in m.items()]
            lines.append(f"{stage}: " + " ".join(parts))
        lines += [f"note: {n}" for n in self.notes]
        return lines

    def to_dict(self) -> dict:
        return {
            "completed": list(self.completed),
            "switch_state": list(self.switch_state) if self.switch_state else None,
            "metrics": self.metrics,
            "notes": list(self.notes),
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(str(x) for x in v) + "]"
    return str(v)


def _match_names(pred: dict, reference: dict, universe=()) -> dict:
    """Rename predicted groups after the reference labels they overlap most
    (one-to-one, drawing on ``universe`` for spare names); groups left over
    keep a generated name."""
    groups = sorted(set(pred.values()), key=str)
    ref_labels = sorted({reference[m] for m in pred if m in reference} | set(universe), key=str)
    if not ref_labels:
        return {g: f"G{g}" for g in groups}
    counts = np.zeros((len(groups), len(ref_labels)))
    gi = {g: i for i, g in enumerate(groups)}
    ri = {r: i for i, r in enumerate(ref_labels)}
    for m, g in pred.items():
        if m in reference:
            counts[gi[g], ri[reference[m]]] += 1
    rows, cols = linear_sum_assignment(-counts)
    names = {groups[r]: ref_labels[c] for r, c in zip(rows, cols)}
    for g in groups:
        names.setdefault(g, f"G{g}")
    return names


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_switch_stage(ds: Dataset, cfg: RunConfig, result: PipelineResult) -> None:
    """Train on the first ``train_fraction`` of the horizon, predict the rest."""
    topo = ds.topology
    if not topo.switch_bars:
        result.notes.append("switch: topology has no switch bar; stage skipped")
        return
    if ds.switch_truth is None:
        result.notes.append("switch: no switch-state history to train on; stage skipped")
        return
    bar = topo.switch_bars[0]
    y = ds.switch_truth
    if y.size != ds.panel.n_steps:
        raise DataError(f"switch history has {y.size} labels for {ds.panel.n_steps} timesteps")
    sub, _ = uniform_sm_selection(ds.panel, topo, bar, cfg.selection.max_sm_per_feeder)
    X = snapshot_rows(sub)
    cut = int(round(cfg.pipeline.train_fraction * X.shape[0]))
    if len(set(y[:cut].tolist())) < 2:
        raise DataError("training history contains fewer than two switch states")
    Xb, yb = balanced_sampling(X[:cut], y[:cut], derive_seed(cfg.seed, "balance"))
    if cfg.pipeline.classifier == "rf":
        fc = cfg.forest
        model = train_forest(Xb, yb, ForestConfig(fc.tree_count, fc.max_depth, fc.min_leaf,
                                                   fc.features_per_split,
                                                   derive_seed(cfg.seed, "forest")))
        pred = model.predict(X[cut:])
    else:
        model = train_gnb(Xb, yb)
        pred = model.predict(X[cut:])
    result.switch_pred = pred
    result.switch_columns = np.arange(cut, X.shape[0])
    result.switch_state = bar.decode(int(pred[-1])) if pred.size else None
    m = {"held_out_steps": int(pred.size), "state": result.switch_state}
    if pred.size:
        m["accuracy"] = float(np.mean(pred == y[cut:]))
    result.metrics["switch"] = m


def _feeder_panel(ds: Dataset, cfg: RunConfig) -> VoltagePanel:
    if not cfg.selection.time_filter:
        return ds.panel
    return select_time(ds.panel, cfg.selection.window())


def run_feeder_stage(ds: Dataset, cfg: RunConfig, result: PipelineResult,
                     recordings: LabelSet | None = None) -> None:
    panel = _feeder_panel(ds, cfg)
    topo = ds.topology
    recorded = {m: mt.feeder for m, mt in topo.meters.items()}
    method = cfg.pipeline.method
    if method == "auto":
        method = "mfp" if recordings is not None else "cluster"
    if method in ("knn", "mfp"):
        if recordings is None:
            raise DataError(f"method {method} needs a recordings file with known feeder labels")
        known = recordings.restrict(panel.meter_ids)
        fn = knn_assign if method == "knn" else mfp_assign
        kwargs = {} if method == "knn" else {"cfg": cfg.correlation}
        labels = fn(panel, known, cfg.pipeline.k, **kwargs)
    else:
        k = len({f for f in recorded.values()})
        res = identify_feeders(panel, k, cfg.correlation, fill_invalid=cfg.pipeline.fill_invalid)
        names = _match_names(res.labels.labels, recorded, [f.id for f in topo.feeders])
        named = LabelSet(labels={m: names[c] for m, c in res.labels.labels.items()},
                         known=dict(res.labels.known), confidence=dict(res.confidence))
        frac = cfg.pipeline.high_confidence
        if frac < 1.0 and k > 1:
            sub = high_confidence_subset(
                ClusteringResult(named, res.linkage, res.confidence), frac)
            labels = mfp_assign(panel, sub, cfg.pipeline.k, cfg.correlation)
        else:
            labels = named
    result.feeders = labels
    m = {"method": method, "meters": len(labels.meter_ids)}
    if ds.feeder_truth is not None:
        truth = ds.feeder_truth.restrict(labels.meter_ids)
        m["aligned_accuracy"] = aligned_accuracy(labels, truth)
        m["purity"] = purity(labels, truth)
    result.metrics["feeder"] = m


def run_phase_stage(ds: Dataset, cfg: RunConfig, result: PipelineResult) -> None:
    if result.feeders is None:
        raise DataError("phase stage needs feeder groups")
    panel = _feeder_panel(ds, cfg)
    recorded = {m: mt.phase for m, mt in ds.topology.meters.items()}
    groups: dict = {}
    for m in result.feeders.meter_ids:
        groups.setdefault(result.feeders.labels[m], []).append(m)
    labels, conf = {}, {}
    hits = pure = 0
    for g in sorted(groups, key=str):
        members = [m for m in panel.meter_ids if m in set(groups[g])]
        if len(members) < 3:
            for m in members:
                labels[m] = recorded.get(m, PHASES[0])
                conf[m] = 0.0
            result.notes.append(f"phase: feeder group {g} has {len(members)} meters; recorded phases kept")
            continue
        res = identify_phases(panel.select_rows(members), 3, fill_invalid=cfg.pipeline.fill_invalid)
        names = _match_names(res.labels.labels, recorded, PHASES)
        for m, c in res.labels.labels.items():
            labels[m] = names[c]
            conf[m] = res.confidence[m]
        if ds.phase_truth is not None:
            part = LabelSet.from_labels({m: res.labels.labels[m] for m in members})
            truth = ds.phase_truth.restrict(members)
            hits += aligned_accuracy(part, truth) * len(members)
            pure += purity(part, truth) * len(members)
    result.phases = LabelSet(labels=labels, known={m: True for m in labels}, confidence=conf)
    m = {"meters": len(labels)}
    if ds.phase_truth is not None and labels:
        m["aligned_accuracy"] = hits / len(labels)
        m["purity"] = pure / len(labels)
    result.metrics["phase"] = m


def run_pipeline(ds: Dataset, cfg: RunConfig, recordings: LabelSet | None = None) -> PipelineResult:
    result = PipelineResult()
    steps = (
        ("switch", lambda: run_switch_stage(ds, cfg, result)),
        ("feeder", lambda: run_feeder_stage(ds, cfg, result, recordings)),
        ("phase", lambda: run_phase_stage(ds, cfg, result)),
    )
    for stage, fn in steps:
        try:
            fn()
        except Exception as exc:  # tag any failure with its stage
            raise StageError(stage, exc, result) from exc
        result.completed.append(stage)
    return result


def write_outputs(result: PipelineResult, ds: Dataset, out_dir, failed_stage: str | None = None) -> list[str]:
    """Write label files, a corrections overlay and the report; returns file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if result.switch_pred is not None:
        stamps = ds.panel.timestamps()
        with open(out / "switch_pred.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "label"])
            for j, lab in zip(result.switch_columns, result.switch_pred):
                w.writerow([stamps[j].isoformat(), int(lab)])
        written.append("switch_pred.csv")
    if result.feeders is not None:
        result.feeders.save(out / "feeder_pred.csv")
        written.append("feeder_pred.csv")
    if result.phases is not None:
        result.phases.save(out / "phase_pred.csv")
        written.append("phase_pred.csv")
    corrections = {}
    for m, mt in sorted(ds.topology.meters.items()):
        entry = {"recorded_feeder": mt.feeder, "recorded_phase": mt.phase}
        if result.feeders is not None and m in result.feeders.labels:
            entry["feeder"] = result.feeders.labels[m]
        if result.phases is not None and m in result.phases.labels:
            entry["phase"] = result.phases.labels[m]
        corrections[m] = entry
    doc = {"switch_state": list(result.switch_state) if result.switch_state else None,
           "partial": failed_stage is not None, "failed_stage": failed_stage,
           "meters": corrections}
    (out / "corrections.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    written.append("corrections.json")
    # recorded topology with identified labels filled in. A meter moved to another
    # feeder hangs off that feeder's head node: its position along it is unknown.
    head = {}
    for n in sorted(ds.topology.nodes, key=lambda n: (n.distance_m, n.id)):
        head.setdefault(n.feeder, n.id)
    node_feeder = {n.id: n.feeder for n in ds.topology.nodes}
    meters, moved = {}, []
    for m, mt in ds.topology.meters.items():
        entry = corrections[m]
        feeder = str(entry.get("feeder", mt.feeder))
        node = mt.node
        if node_feeder.get(node) != feeder and feeder in head:
            node = head[feeder]
            moved.append(m)
        meters[m] = replace(mt, node=node, feeder=feeder, phase=str(entry.get("phase", mt.phase)))
    topo_doc = ds.topology.replace(meters=meters).to_dict()
    topo_doc["relocated_meters"] = sorted(moved)
    bars = ds.topology.switch_bars
    topo_doc["switch_states"] = ({bars[0].bar_id: list(result.switch_state)}
                                 if bars and result.switch_state else {})
    (out / "topology_corrected.json").write_text(json.dumps(topo_doc, indent=1) + "\n")
    written.append("topology_corrected.json")
    lines = result.report_lines()
    if failed_stage:
        lines.append(f"status: failed at stage {failed_stage}; outputs are partial")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    (out / "report.json").write_text(json.dumps({**result.to_dict(), "failed_stage": failed_stage},
                                                indent=1, sort_keys=True, default=_json_default) + "\n")
    written += ["report.txt", "report.json"]
    return written


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))
