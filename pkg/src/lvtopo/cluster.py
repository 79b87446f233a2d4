"""Complete-linkage agglomeration on MFP/correlation distances.

Used without any recorded labels: feeders are recovered by cutting the
dendrogram at the known feeder count, phases by cutting at three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lvtopo.correlate import CorrelationConfig, correlation_distance, distance_matrix
from lvtopo.errors import DataError, InvalidDistanceError
from lvtopo.model import DistanceMatrix, LabelSet, VoltagePanel
from lvtopo.selection import znormalize


@dataclass(frozen=True)
class LinkageRecord:
    merged_a: int
    merged_b: int
    height: float
    new_size: int


@dataclass(frozen=True)
class ClusteringResult:
    labels: LabelSet
    linkage: tuple[LinkageRecord, ...]
    confidence: dict[str, float]
    distances: DistanceMatrix | None = None

    def clusters(self) -> list[list[str]]:
        groups: dict = {}
        for m in self.labels.meter_ids:
            groups.setdefault(self.labels.labels[m], []).append(m)
        return [groups[k] for k in sorted(groups)]


def complete_linkage(d: np.ndarray) -> list[LinkageRecord]:
    """Full agglomeration of an N x N distance matrix.

    Cluster ids follow the usual convention: leaves are 0..N-1 and the
    cluster created by merge t gets id N+t. Among pairs at the minimal
    linkage distance the one with the lexicographically smallest
    (min id, max id) is merged first.
    """
    d = np.array(d, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n):
        raise DataError("distance matrix must be square")
    if np.isnan(d).any():
        raise InvalidDistanceError("distance matrix contains invalid (NaN) pairs")
    work = d.copy()
    np.fill_diagonal(work, np.inf)
    ids = np.arange(n)  # cluster id held in each slot
    size = np.ones(n, dtype=int)
    active = np.ones(n, dtype=bool)
    records: list[LinkageRecord] = []
    for t in range(n - 1):
        sub = np.where(active[:, None] & active[None, :], work, np.inf)
        best = sub.min()
        ii, jj = np.nonzero(np.triu(sub == best, 1))
        lo = np.minimum(ids[ii], ids[jj])
        hi = np.maximum(ids[ii], ids[jj])
        pick = np.lexsort((hi, lo))[0]
        a, b = ii[pick], jj[pick]
        if ids[a] > ids[b]:
            a, b = b, a
        records.append(LinkageRecord(int(ids[a]), int(ids[b]), float(best), int(size[a] + size[b])))
        # Max rule; the merged cluster lives in slot a.
        merged = np.maximum(work[a], work[b])
        work[a, :] = merged
        work[:, a] = merged
        work[a, a] = np.inf
        active[b] = False
        work[b, :] = np.inf
        work[:, b] = np.inf
        size[a] += size[b]
        ids[a] = n + t
    return records


def cut_linkage(records: list[LinkageRecord], n: int, k: int) -> np.ndarray:
    """Flat labels 0..k-1 from the first n-k merges, numbered by first appearance."""
    if not 1 <= k <= n:
        raise DataError(f"cannot cut {n} points into {k} clusters")
    parent = list(range(n + len(records)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t, r in enumerate(records[: n - k]):
        parent[find(r.merged_a)] = n + t
        parent[find(r.merged_b)] = n + t
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    return np.array([relabel.setdefault(r, len(relabel)) for r in roots])


def hcluster(D: DistanceMatrix, k: int) -> ClusteringResult:
    """Complete-linkage clustering of ``D`` cut into ``k`` clusters."""
    n = len(D.meter_order)
    if k > n:
        raise DataError(f"K_s={k} exceeds the number of meters ({n})")
    if D.has_invalid:
        pairs = D.invalid_pairs()
        raise InvalidDistanceError(
            f"{len(pairs)} invalid distance pairs, e.g. {pairs[:3]}; use fill_invalid"
        )
    records = complete_linkage(D.d)
    flat = cut_linkage(records, n, k)
    conf = _margin_confidence(D.d, flat, k)
    labels = LabelSet(
        labels={m: int(c) for m, c in zip(D.meter_order, flat)},
        known={m: True for m in D.meter_order},
        confidence=dict(zip(D.meter_order, conf)),
    )
    return ClusteringResult(labels=labels, linkage=tuple(records),
                            confidence=dict(zip(D.meter_order, conf)), distances=D)


def _margin_confidence(d: np.ndarray, flat: np.ndarray, k: int) -> np.ndarray:
    """(second-smallest - smallest) / second-smallest of mean distances to clusters."""
    n = d.shape[0]
    if k == 1:
        return np.ones(n)
    means = np.empty((n, k))
    for c in range(k):
        members = flat == c
        sums = d[:, members].sum(axis=1)
        counts = np.full(n, members.sum(), dtype=float)
        counts[members] -= 1  # exclude the meter itself
        with np.errstate(invalid="ignore", divide="ignore"):
            means[:, c] = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    srt = np.sort(means, axis=1)
    first, second = srt[:, 0], srt[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(second > 0, (second - first) / second, 0.0)
    conf = np.where(np.isfinite(conf), conf, 1.0)
    return np.clip(conf, 0.0, 1.0)


def identify_feeders(
    panel: VoltagePanel,
    k: int,
    cfg: CorrelationConfig | None = None,
    fill_invalid: bool = False,
) -> ClusteringResult:
    """User-feeder grouping without recordings: MFP distances, then complete linkage."""
    if k == 1:
        ids = panel.meter_ids
        labels = LabelSet(labels={m: 0 for m in ids}, known={m: True for m in ids})
        return ClusteringResult(labels=labels, linkage=(), confidence={m: 1.0 for m in ids})
    D = distance_matrix(panel, "mfp", cfg, fill_invalid=fill_invalid)
    return hcluster(D, k)


def identify_phases(
    panel: VoltagePanel,
    k: int = 3,
    min_overlap: int = 3,
    fill_invalid: bool = False,
) -> ClusteringResult:
    """Three-way phase grouping of one feeder's meters.

    Columns are z-scored across meters first, then meters are compared with
    the correlation distance 1 - clamp(rho, 0, 1) (no Fisher stretch).
    """
    if panel.n_meters < 3:
        raise DataError(f"phase identification needs >= 3 meters, got {panel.n_meters}")
    normed, _ = znormalize(panel)
    D = correlation_distance(normed, min_overlap=min_overlap, fill_invalid=fill_invalid)
    return hcluster(D, k)


def high_confidence_subset(result: ClusteringResult, fraction: float) -> LabelSet:
    """Keep the top ceil(fraction * N) meters by confidence as known labels."""
    if not 0 < fraction <= 1:
        raise DataError("fraction must be in (0, 1]")
    ids = result.labels.meter_ids
    n_keep = math.ceil(fraction * len(ids) - 1e-12)
    order = sorted(range(len(ids)), key=lambda i: -result.confidence[ids[i]])
    keep = {ids[i] for i in order[:n_keep]}
    return LabelSet(
        labels=dict(result.labels.labels),
        known={m: m in keep for m in ids},
        confidence=dict(result.confidence),
    )
