"""Domain types shared by every pipeline stage, plus their file formats.

Voltage panels are meters x timesteps with an explicit observation mask;
missing cells are never encoded as sentinel magnitudes. Topologies are
radial per feeder and serialise to a JSON document whose top-level keys are
``transformers, feeders, nodes, lines, meters, switch_bars``.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from functools import cached_property
from pathlib import Path

import numpy as np

from lvtopo.errors import DataError, InadmissibleStateError

PHASES = ("A", "B", "C")
MINUTES_PER_DAY = 1440
DEFAULT_START = datetime(2024, 1, 1)


def _frozen_array(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Voltage panel
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoltagePanel:
    """Voltage magnitudes of N meters over T timesteps.

    ``steps`` holds the absolute step offset of every column from ``start``
    so that a column subset (after time selection) still maps to the right
    time of day. ``normalized`` panels hold z-scores and are exempt from the
    positivity check.
    """

    values: np.ndarray
    mask: np.ndarray
    meter_ids: tuple[str, ...]
    resolution_minutes: int = 15
    start: datetime = DEFAULT_START
    steps: np.ndarray | None = None
    normalized: bool = False

    def __post_init__(self):
        values = _frozen_array(self.values, float)
        mask = _frozen_array(self.mask, bool)
        if values.ndim != 2:
            raise DataError(f"panel values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} != values shape {values.shape}")
        n, t = values.shape
        if n < 1 or t < 1:
            raise DataError("panel needs at least one meter and one timestep")
        ids = tuple(str(m) for m in self.meter_ids)
        if len(ids) != n:
            raise DataError(f"{len(ids)} meter ids for {n} rows")
        if len(set(ids)) != n:
            raise DataError("duplicate meter ids in panel")
        if int(self.resolution_minutes) <= 0:
            raise DataError("resolution_minutes must be positive")
        observed = values[mask]
        if not np.all(np.isfinite(observed)):
            raise DataError("observed panel values must be finite")
        if not self.normalized and np.any(observed <= 0):
            raise DataError("observed voltage magnitudes must be strictly positive")
        steps = np.arange(t) if self.steps is None else self.steps
        steps = _frozen_array(steps, np.int64)
        if steps.shape != (t,):
            raise DataError("steps must have one entry per column")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "meter_ids", ids)
        object.__setattr__(self, "resolution_minutes", int(self.resolution_minutes))
        object.__setattr__(self, "steps", steps)

    @property
    def n_meters(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def columns_per_day(self) -> int:
        return MINUTES_PER_DAY // self.resolution_minutes

    @cached_property
    def row_of(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.meter_ids)}

    def within_day_index(self) -> np.ndarray:
        """Index of each column inside its day (0 .. columns_per_day-1)."""
        start_min = self.start.hour * 60 + self.start.minute
        minutes = (start_min + self.steps * self.resolution_minutes) % MINUTES_PER_DAY
        return minutes // self.resolution_minutes

    def timestamps(self) -> list[datetime]:
        res = timedelta(minutes=self.resolution_minutes)
        return [self.start + int(s) * res for s in self.steps]

    def masked_values(self) -> np.ndarray:
        """Copy of ``values`` with unobserved cells set to NaN."""
        return np.where(self.mask, self.values, np.nan)

    def replace(self, **changes) -> VoltagePanel:
        kw = dict(
            values=self.values,
            mask=self.mask,
            meter_ids=self.meter_ids,
            resolution_minutes=self.resolution_minutes,
            start=self.start,
            steps=self.steps,
            normalized=self.normalized,
        )
        kw.update(changes)
        return VoltagePanel(**kw)

    def select_rows(self, meter_ids: Sequence[str]) -> VoltagePanel:
        idx = [self.row_of[m] for m in meter_ids]
        return self.replace(
            values=self.values[idx], mask=self.mask[idx], meter_ids=tuple(meter_ids)
        )

    def select_columns(self, cols) -> VoltagePanel:
        cols = np.asarray(cols)
        if cols.dtype == bool:
            cols = np.flatnonzero(cols)
        return self.replace(
            values=self.values[:, cols], mask=self.mask[:, cols], steps=self.steps[cols]
        )


def time_of_day_index(panel: VoltagePanel, t: int) -> int:
    """Minutes since midnight of column ``t``."""
    if not 0 <= t < panel.n_steps:
        raise IndexError(f"column {t} out of range for panel with {panel.n_steps} columns")
    start_min = panel.start.hour * 60 + panel.start.minute
    return int((start_min + int(panel.steps[t]) * panel.resolution_minutes) % MINUTES_PER_DAY)


def write_panel_csv(panel: VoltagePanel, path) -> None:
    """First column ISO-8601 timestamp, one column per meter, empty cell = missing."""
    stamps = panel.timestamps()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *panel.meter_ids])
        for j, ts in enumerate(stamps):
            col = panel.values[:, j]
            obs = panel.mask[:, j]
            w.writerow([ts.isoformat(), *(f"{v:.6f}" if o else "" for v, o in zip(col, obs))])


def read_panel_csv(path, normalized: bool = False) -> VoltagePanel:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or not rows[0] or rows[0][0] != "timestamp":
        raise DataError(f"{path}: expected header starting with 'timestamp' and >= 1 data row")
    meter_ids = tuple(rows[0][1:])
    stamps = [datetime.fromisoformat(r[0]) for r in rows[1:]]
    n, t = len(meter_ids), len(stamps)
    values = np.full((n, t), np.nan)
    for j, r in enumerate(rows[1:]):
        if len(r) != n + 1:
            raise DataError(f"{path}: row {j + 2} has {len(r)} cells, expected {n + 1}")
        for i, cell in enumerate(r[1:]):
            if cell.strip():
                values[i, j] = float(cell)
    mask = ~np.isnan(values)
    if t > 1:
        res = int(round((stamps[1] - stamps[0]).total_seconds() / 60))
    else:
        res = 15
    offsets = [int(round((s - stamps[0]).total_seconds() / 60)) for s in stamps]
    if any(o % res for o in offsets):
        raise DataError(f"{path}: timestamps are not on a {res}-minute grid")
    steps = np.array(offsets) // res
    return VoltagePanel(
        values=np.where(mask, values, 0.0),
        mask=mask,
        meter_ids=meter_ids,
        resolution_minutes=res,
        start=stamps[0],
        steps=steps,
        normalized=normalized,
    )


# ---------------------------------------------------------------------------
# Network topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transformer:
    """Source node. ``r_ohm``/``x_ohm`` is the per-phase series impedance."""

    id: str
    nominal_voltage: float = 230.0
    r_ohm: float = 0.0
    x_ohm: float = 0.0


@dataclass(frozen=True)
class Feeder:
    id: str
    transformer: str


@dataclass(frozen=True)
class Node:
    id: str
    feeder: str
    distance_m: float
    connection_count: int = 1


@dataclass(frozen=True)
class Line:
    """Series branch ``from_node -> to_node``; ``from_node`` may be a transformer."""

    from_node: str
    to_node: str
    r_ohm: tuple[float, float, float]
    x_ohm: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "r_ohm", tuple(float(v) for v in self.r_ohm))
        object.__setattr__(self, "x_ohm", tuple(float(v) for v in self.x_ohm))


@dataclass(frozen=True)
class Meter:
    """One single-phase voltage series. Three-phase customers own three meters
    sharing a ``customer`` id."""

    node: str
    phase: str
    feeder: str
    customer: str | None = None


@dataclass(frozen=True)
class SwitchBar:
    bar_id: str
    switch_count: int
    feeder_ids: tuple[str, ...]
    state_catalog: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "feeder_ids", tuple(self.feeder_ids))
        object.__setattr__(
            self, "state_catalog", tuple(tuple(int(v) for v in s) for s in self.state_catalog)
        )

    @cached_property
    def encoding(self) -> dict[tuple[int, ...], int]:
        return {s: j for j, s in enumerate(self.state_catalog)}

    @property
    def n_classes(self) -> int:
        return len(self.state_catalog)

    def encode(self, state: Sequence[int]) -> int:
        key = tuple(int(v) for v in state)
        try:
            return self.encoding[key]
        except KeyError:
            raise InadmissibleStateError(
                f"state {list(key)} is not admissible for bar {self.bar_id}"
            ) from None

    def decode(self, label: int) -> tuple[int, ...]:
        if not 0 <= int(label) < len(self.state_catalog):
            raise InadmissibleStateError(f"label {label} outside 0..{self.n_classes - 1}")
        return self.state_catalog[int(label)]


@dataclass(frozen=True)
class NetworkTopology:
    transformers: tuple[Transformer, ...]
    feeders: tuple[Feeder, ...]
    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    meters: Mapping[str, Meter]
    switch_bars: tuple[SwitchBar, ...] = ()

    def __post_init__(self):
        for name in ("transformers", "feeders", "nodes", "lines", "switch_bars"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "meters", dict(self.meters))

    @cached_property
    def node_by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def transformer_by_id(self) -> dict[str, Transformer]:
        return {t.id: t for t in self.transformers}

    @cached_property
    def feeder_by_id(self) -> dict[str, Feeder]:
        return {f.id: f for f in self.feeders}

    def meters_on_feeder(self, feeder_id: str) -> list[str]:
        return [m for m, meter in self.meters.items() if meter.feeder == feeder_id]

    def feeder_labels(self) -> LabelSet:
        return LabelSet.from_labels({m: v.feeder for m, v in self.meters.items()})

    def phase_labels(self) -> LabelSet:
        return LabelSet.from_labels({m: v.phase for m, v in self.meters.items()})

    def replace(self, **changes) -> NetworkTopology:
        kw = {k: getattr(self, k) for k in
              ("transformers", "feeders", "nodes", "lines", "meters", "switch_bars")}
        kw.update(changes)
        return NetworkTopology(**kw)

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "transformers": [
                {"id": t.id, "nominal_voltage": t.nominal_voltage, "r_ohm": t.r_ohm, "x_ohm": t.x_ohm}
                for t in self.transformers
            ],
            "feeders": [{"id": f.id, "transformer": f.transformer} for f in self.feeders],
            "nodes": [
                {"id": n.id, "feeder": n.feeder, "distance_m": n.distance_m,
                 "connection_count": n.connection_count}
                for n in self.nodes
            ],
            "lines": [
                {"from_node": ln.from_node, "to_node": ln.to_node,
                 "r_ohm": list(ln.r_ohm), "x_ohm": list(ln.x_ohm)}
                for ln in self.lines
            ],
            "meters": {
                mid: {"node": m.node, "phase": m.phase, "feeder": m.feeder, "customer": m.customer}
                for mid, m in self.meters.items()
            },
            "switch_bars": [
                {
                    "bar_id": b.bar_id,
                    "switch_count": b.switch_count,
                    "feeder_ids": list(b.feeder_ids),
                    "state_catalog": [list(s) for s in b.state_catalog],
                    "encoding": [[list(s), j] for s, j in b.encoding.items()],
                }
                for b in self.switch_bars
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> NetworkTopology:
        missing = {"transformers", "feeders", "nodes", "lines", "meters", "switch_bars"} - set(d)
        if missing:
            raise DataError(f"topology document lacks keys {sorted(missing)}")
        bars = []
        for b in d["switch_bars"]:
            bar = SwitchBar(b["bar_id"], int(b["switch_count"]), tuple(b["feeder_ids"]),
                            tuple(tuple(s) for s in b["state_catalog"]))
            for s, j in b.get("encoding", []):
                if bar.encode(s) != j:
                    raise DataError(f"bar {bar.bar_id}: encoding disagrees with catalog order")
            bars.append(bar)
        return cls(
            transformers=tuple(Transformer(**t) for t in d["transformers"]),
            feeders=tuple(Feeder(**f) for f in d["feeders"]),
            nodes=tuple(Node(**n) for n in d["nodes"]),
            lines=tuple(Line(**ln) for ln in d["lines"]),
            meters={mid: Meter(**m) for mid, m in d["meters"].items()},
            switch_bars=tuple(bars),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> NetworkTopology:
        return cls.from_dict(json.loads(Path(path).read_text()))


def feeder_parent_map(topo: NetworkTopology) -> dict[str, str]:
    """child node -> parent (node or transformer id). Assumes a valid topology."""
    return {ln.to_node: ln.from_node for ln in topo.lines}


def validate_topology(topo: NetworkTopology) -> list[str]:
    """Return human-readable invariant violations; empty when the topology is valid."""
    out: list[str] = []
    tr_ids = {t.id for t in topo.transformers}
    feeder_ids = {f.id for f in topo.feeders}
    node_ids = {n.id for n in topo.nodes}

    for kind, ids in (("transformer", [t.id for t in topo.transformers]),
                      ("feeder", [f.id for f in topo.feeders]),
                      ("node", [n.id for n in topo.nodes])):
        if len(ids) != len(set(ids)):
            out.append(f"duplicate {kind} ids")
    if tr_ids & node_ids:
        out.append(f"ids used for both transformers and nodes: {sorted(tr_ids & node_ids)}")
    for t in topo.transformers:
        if not t.nominal_voltage > 0:
            out.append(f"transformer {t.id}: nominal voltage must be positive")
        if t.r_ohm < 0 or t.x_ohm < 0:
            out.append(f"transformer {t.id}: negative impedance")
    for f in topo.feeders:
        if f.transformer not in tr_ids:
            out.append(f"feeder {f.id}: unknown transformer {f.transformer}")
    for n in topo.nodes:
        if n.feeder not in feeder_ids:
            out.append(f"node {n.id}: unknown feeder {n.feeder}")

    node_feeder = {n.id: n.feeder for n in topo.nodes}
    parents: dict[str, list[str]] = {}
    for ln in topo.lines:
        if len(ln.r_ohm) != 3 or len(ln.x_ohm) != 3:
            out.append(f"line {ln.from_node}->{ln.to_node}: need 3 per-phase impedances")
            continue
        if any(v < 0 for v in ln.r_ohm + ln.x_ohm):
            out.append(f"line {ln.from_node}->{ln.to_node}: negative impedance")
        if any(r <= 0 and x <= 0 for r, x in zip(ln.r_ohm, ln.x_ohm)):
            out.append(f"line {ln.from_node}->{ln.to_node}: zero impedance on a phase")
        if ln.to_node not in node_ids:
            out.append(f"line {ln.from_node}->{ln.to_node}: unknown to_node")
            continue
        if ln.from_node not in node_ids and ln.from_node not in tr_ids:
            out.append(f"line {ln.from_node}->{ln.to_node}: unknown from_node")
            continue
        if ln.from_node in node_ids and node_feeder[ln.from_node] != node_feeder[ln.to_node]:
            out.append(f"line {ln.from_node}->{ln.to_node}: joins two feeders")
            continue
        parents.setdefault(ln.to_node, []).append(ln.from_node)

    feeder_root = {f.id: f.transformer for f in topo.feeders}
    for f in topo.feeders:
        members = [n for n in topo.nodes if n.feeder == f.id]
        problems = []
        for n in members:
            ps = parents.get(n.id, [])
            if len(ps) != 1:
                problems.append(f"node {n.id} has {len(ps)} parents")
            elif ps[0] in tr_ids and ps[0] != feeder_root[f.id]:
                problems.append(f"node {n.id} fed from foreign transformer {ps[0]}")
        if not problems:
            for n in members:
                seen = set()
                cur = n.id
                while cur in node_ids:
                    if cur in seen:
                        problems.append(f"cycle through {cur}")
                        break
                    seen.add(cur)
                    cur = parents[cur][0]
                if problems:
                    break
        if problems:
            out.append(f"feeder {f.id}: not a tree ({'; '.join(problems[:3])})")

    for mid, m in topo.meters.items():
        if m.node not in node_ids:
            out.append(f"meter {mid}: dangling meter (node {m.node} does not exist)")
            continue
        if m.feeder != node_feeder[m.node]:
            out.append(f"meter {mid}: feeder {m.feeder} != node feeder {node_feeder[m.node]}")
        if m.phase not in PHASES:
            out.append(f"meter {mid}: phase {m.phase!r} not in {PHASES}")

    for b in topo.switch_bars:
        if b.switch_count < 1:
            out.append(f"bar {b.bar_id}: switch_count must be positive")
        for s in b.state_catalog:
            if len(s) != b.switch_count or any(v not in (0, 1) for v in s):
                out.append(f"bar {b.bar_id}: bad state vector {list(s)}")
        if len(set(b.state_catalog)) != len(b.state_catalog):
            out.append(f"bar {b.bar_id}: duplicate states in catalog")
        for fid in b.feeder_ids:
            if fid not in feeder_ids:
                out.append(f"bar {b.bar_id}: unknown feeder {fid}")
    return out


# ---------------------------------------------------------------------------
# Labels and distances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelSet:
    """Per-meter categorical labels, partially known.

    ``known`` enumerates every meter in the set (its keys fix the meter order);
    ``labels`` holds a category for at least every known meter.
    """

    labels: Mapping[str, Hashable]
    known: Mapping[str, bool]
    confidence: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        labels = dict(self.labels)
        known = {m: bool(k) for m, k in self.known.items()}
        for m in labels:
            known.setdefault(m, False)
        conf = {m: float(self.confidence.get(m, 1.0)) for m in known}
        for m, k in known.items():
            if k and m not in labels:
                raise DataError(f"meter {m} marked known without a label")
        for m, c in conf.items():
            if not 0.0 <= c <= 1.0 or math.isnan(c):
                raise DataError(f"confidence of {m} outside [0, 1]: {c}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def from_labels(cls, labels: Mapping[str, Hashable], confidence=None) -> LabelSet:
        return cls(labels=dict(labels), known={m: True for m in labels},
                   confidence=dict(confidence or {}))

    @property
    def meter_ids(self) -> list[str]:
        return list(self.known)

    def known_ids(self) -> list[str]:
        return [m for m, k in self.known.items() if k]

    def unknown_ids(self) -> list[str]:
        return [m for m, k in self.known.items() if not k]

    def categories(self) -> list:
        return sorted({self.labels[m] for m in self.known_ids()}, key=str)

    def restrict(self, meter_ids: Iterable[str]) -> LabelSet:
        ids = [m for m in meter_ids]
        return LabelSet(
            labels={m: self.labels[m] for m in ids if m in self.labels},
            known={m: self.known.get(m, False) for m in ids},
            confidence={m: self.confidence.get(m, 1.0) for m in ids},
        )

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["meter_id", "label", "known", "confidence"])
            for m, k in self.known.items():
                lab = self.labels.get(m, "")
                w.writerow([m, lab, int(k), f"{self.confidence[m]:.6f}"])

    @classmethod
    def load(cls, path) -> LabelSet:
        labels, known, conf = {}, {}, {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "meter_id" not in reader.fieldnames:
                raise DataError(f"{path}: expected a 'meter_id,label,known,confidence' header")
            for row in reader:
                m = row["meter_id"]
                lab = row.get("label", "")
                if lab != "":
                    labels[m] = lab
                known[m] = row.get("known", "1").strip() not in ("0", "false", "False", "")
                if row.get("confidence"):
                    conf[m] = float(row["confidence"])
        return cls(labels=labels, known=known, confidence=conf)


DISTANCE_KINDS = ("mfp", "euclidean", "correlation")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric pairwise distances; invalid pairs hold NaN and are flagged."""

    d: np.ndarray
    kind: str
    meter_order: tuple[str, ...]
    invalid: np.ndarray | None = None

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        n = len(self.meter_order)
        if d.shape != (n, n):
            raise DataError(f"distance matrix shape {d.shape} does not match {n} meters")
        if self.kind not in DISTANCE_KINDS:
            raise DataError(f"unknown distance kind {self.kind!r}")
        invalid = np.isnan(d) if self.invalid is None else np.array(self.invalid, dtype=bool)
        valid = ~invalid
        if not np.allclose(np.where(valid, d, 0), np.where(valid, d, 0).T, rtol=0, atol=1e-12):
            raise DataError("distance matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise DataError("distance matrix diagonal must be zero")
        if np.any(d[valid] < 0):
            raise DataError("distances must be nonnegative")
        if self.kind == "mfp" and np.any(d[valid] >= 1):
            raise DataError("MFP distances must lie in [0, 1)")
        d.setflags(write=False)
        invalid.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "invalid", invalid)
        object.__setattr__(self, "meter_order", tuple(self.meter_order))

    @property
    def has_invalid(self) -> bool:
        return bool(self.invalid.any())

    def invalid_pairs(self) -> list[tuple[str, str]]:
        i, j = np.nonzero(np.triu(self.invalid, 1))
        return [(self.meter_order[a], self.meter_order[b]) for a, b in zip(i, j)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["meter_id", *self.meter_order])
            for m, row in zip(self.meter_order, self.d):
                w.writerow([m, *("" if np.isnan(v) else f"{v:.9f}" for v in row)])
