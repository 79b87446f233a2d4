"""Dataset conditioning: time windows, meter selection, class balancing,
training-matrix layout and column z-scoring."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from lvtopo.errors import DataError, EmptySelectionError
from lvtopo.model import NetworkTopology, SwitchBar, VoltagePanel


@dataclass(frozen=True)
class TimeWindow:
    """Fixed window [t1, t2] on the within-day column index, or a dynamic
    PV-below-load mask.

    ``window_sense='outside'`` keeps the complement of [t1, t2]; with the
    default 20..88 at 15-minute resolution that is 22:15-05:00, the low-PV
    hours.
    """

    mode: str = "fixed"
    t1: int = 20
    t2: int = 88
    window_sense: str = "outside"
    pv_ref: np.ndarray | None = None
    load_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise DataError(f"unknown time-window mode {self.mode!r}")
        if self.window_sense not in ("inside", "outside"):
            raise DataError(f"window_sense must be 'inside' or 'outside', got {self.window_sense!r}")
        if self.mode == "fixed":
            if not 0 <= self.t1 <= self.t2:
                raise DataError(f"need 0 <= t1 <= t2, got t1={self.t1}, t2={self.t2}")
        else:
            if self.pv_ref is None or self.load_ref is None:
                raise DataError("dynamic window needs pv_ref and load_ref")
            pv = np.asarray(self.pv_ref, float)
            ld = np.asarray(self.load_ref, float)
            if pv.shape != ld.shape:
                raise DataError("pv_ref and load_ref must have equal length")
            object.__setattr__(self, "pv_ref", pv)
            object.__setattr__(self, "load_ref", ld)


def select_time(panel: VoltagePanel, w: TimeWindow) -> VoltagePanel:
    """Keep the columns admitted by the window, preserving order."""
    if w.mode == "fixed":
        if w.t2 >= panel.columns_per_day:
            raise DataError(f"t2={w.t2} beyond {panel.columns_per_day} columns per day")
        i = panel.within_day_index()
        inside = (i >= w.t1) & (i <= w.t2)
        keep = inside if w.window_sense == "inside" else ~inside
    else:
        # The references are indexed by absolute step, like the panel's steps.
        if panel.steps.max() >= w.pv_ref.shape[0]:
            raise DataError("dynamic references shorter than the panel horizon")
        keep = w.pv_ref[panel.steps] < w.load_ref[panel.steps]
    if not keep.any():
        raise EmptySelectionError("empty selection: the time window admits no columns")
    return panel.select_columns(keep)


def uniform_sm_selection(
    panel: VoltagePanel,
    topo: NetworkTopology,
    bar: SwitchBar,
    max_per_feeder: int | None = None,
) -> tuple[VoltagePanel, list[str]]:
    """Same meter count M from every feeder of the bar, closest to the bar first.

    M is the smallest number of available meters (any observed cell) over
    the bar's feeders, optionally capped at ``max_per_feeder``. Rows come
    out feeder by feeder in feeder-id order.
    """
    available = {m for m, i in panel.row_of.items() if panel.mask[i].any()}
    per_feeder: dict[str, list[str]] = {}
    for fid in sorted(bar.feeder_ids):
        cands = [m for m in topo.meters_on_feeder(fid) if m in available]
        if not cands:
            raise DataError(f"feeder {fid} has no available smart meters")
        cands.sort(key=lambda m: (topo.node_by_id[topo.meters[m].node].distance_m, m))
        per_feeder[fid] = cands
    m_min = min(len(c) for c in per_feeder.values())
    if max_per_feeder is not None:
        if max_per_feeder < 1:
            raise DataError("max_per_feeder must be >= 1")
        m_min = min(m_min, max_per_feeder)
    chosen = [m for fid in sorted(per_feeder) for m in per_feeder[fid][:m_min]]
    return panel.select_rows(chosen), chosen


def balanced_sampling(
    X: np.ndarray,
    y: np.ndarray,
    rng_seed: int,
    classes: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """S = smallest class size rows drawn uniformly from every class, shuffled."""
    X = np.asarray(X)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise DataError("feature rows and labels differ in length")
    classes = sorted(set(y.tolist())) if classes is None else list(classes)
    groups = {c: np.flatnonzero(y == c) for c in classes}
    empty = [c for c, g in groups.items() if g.size == 0]
    if empty:
        raise DataError(f"classes without samples: {empty}")
    s = min(g.size for g in groups.values())
    rng = np.random.default_rng(rng_seed)
    picked = np.concatenate([np.sort(rng.choice(groups[c], size=s, replace=False)) for c in classes])
    picked = picked[rng.permutation(picked.size)]
    return X[picked], y[picked]


def assemble_training_matrix(
    samples: Mapping[int, Sequence[Sequence[float]]],
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-class sample rows, class by class in label order.

    Each row is one timestep: the M selected meters of feeder 1, then the
    M of feeder 2, and so on.
    """
    if not samples or all(len(rows) == 0 for rows in samples.values()):
        raise DataError("no samples to assemble")
    blocks, labels = [], []
    width = None
    for c in sorted(samples):
        for r in samples[c]:
            r = np.asarray(r, dtype=float)
            if r.ndim != 1:
                raise DataError("sample rows must be 1-D")
            if width is None:
                width = r.size
            elif r.size != width:
                raise DataError(f"ragged rows: width {r.size} != {width}")
            blocks.append(r)
            labels.append(c)
    return np.vstack(blocks), np.array(labels, dtype=int)


def snapshot_rows(panel: VoltagePanel) -> np.ndarray:
    """Timesteps as rows, meters as columns, NaN for missing cells."""
    return panel.masked_values().T


def znormalize(panel: VoltagePanel) -> tuple[VoltagePanel, np.ndarray]:
    """Column-wise z-score over observed cells (population SD).

    Returns the normalised panel and a boolean flag per column marking
    degenerate columns (SD < 1e-12 or fewer than two observations); those
    columns are set to zero.
    """
    v = panel.values
    m = panel.mask
    cnt = m.sum(axis=0)
    safe = np.maximum(cnt, 1)
    mu = np.where(m, v, 0.0).sum(axis=0) / safe
    dev = np.where(m, v - mu, 0.0)
    sd = np.sqrt((dev * dev).sum(axis=0) / safe)
    flagged = (cnt < 2) | (sd < 1e-12)
    z = np.where(flagged, 0.0, dev / np.where(flagged, 1.0, sd))
    z = np.where(m, z, 0.0)
    return panel.replace(values=z, normalized=True), flagged
