"""Propagating recorded feeder labels to unknown meters.

Two neighbour rules share one voting routine: Euclidean KNN on raw
voltages, and the MFP nearest-label rule.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from lvtopo.correlate import (
    CorrelationConfig,
    mfp_from_rho,
    pairwise_euclidean,
    pairwise_pcc,
)
from lvtopo.errors import DataError
from lvtopo.model import LabelSet, VoltagePanel
from lvtopo.selection import znormalize


def _split(panel: VoltagePanel, known: LabelSet, k: int):
    known_ids = [m for m in panel.meter_ids if known.known.get(m, False)]
    unknown_ids = [m for m in panel.meter_ids if not known.known.get(m, False)]
    if k < 1:
        raise DataError("k must be a positive integer")
    if k > len(known_ids):
        raise DataError(f"k={k} exceeds the number of known meters ({len(known_ids)})")
    return known_ids, unknown_ids


def vote(distances: np.ndarray, labels: list, k: int):
    """Majority label among the k nearest; ties by mean distance, then label order.

    ``distances`` may contain NaN for invalid candidates, which are skipped.
    Returns (label, share of votes).
    """
    valid = np.flatnonzero(~np.isnan(distances))
    if valid.size < k:
        raise DataError(f"only {valid.size} valid candidates for k={k}")
    order = valid[np.argsort(distances[valid], kind="stable")][:k]
    counts = Counter(labels[i] for i in order)
    top = max(counts.values())
    tied = [c for c, v in counts.items() if v == top]
    if len(tied) > 1:
        mean_d = {c: np.mean([distances[i] for i in order if labels[i] == c]) for c in tied}
        rank = {c: r for r, c in enumerate(_label_order(set(labels)))}
        tied.sort(key=lambda c: (mean_d[c], rank[c]))
    return tied[0], top / k


def _label_order(labels) -> list:
    try:
        return sorted(labels)
    except TypeError:
        return sorted(labels, key=str)


def _assign(panel, known, k, dist, known_ids, unknown_ids) -> LabelSet:
    row = panel.row_of
    k_rows = [row[m] for m in known_ids]
    k_labels = [known.labels[m] for m in known_ids]
    labels = {m: known.labels[m] for m in known.meter_ids if m in known.labels}
    flags = dict(known.known)
    conf = dict(known.confidence)
    for m in unknown_ids:
        lab, share = vote(dist[row[m], k_rows], k_labels, k)
        labels[m] = lab
        flags[m] = True
        conf[m] = share
    for m in panel.meter_ids:
        flags.setdefault(m, True)
    return LabelSet(labels=labels, known=flags, confidence=conf)


def knn_assign(
    panel: VoltagePanel,
    known: LabelSet,
    k: int = 1,
    normalize: bool = False,
    min_overlap: int = 1,
) -> LabelSet:
    """Label every unknown meter by a vote of its k Euclidean-nearest known meters."""
    known_ids, unknown_ids = _split(panel, known, k)
    src = znormalize(panel)[0] if normalize else panel
    dist, _, _ = pairwise_euclidean(src.values, src.mask, min_overlap)
    return _assign(panel, known, k, dist, known_ids, unknown_ids)


def mfp_assign(
    panel: VoltagePanel,
    known: LabelSet,
    k: int = 1,
    cfg: CorrelationConfig | None = None,
) -> LabelSet:
    """Label every unknown meter by a vote of its k MFP-nearest known meters.

    Pairs without a valid correlation are dropped from the candidate set.
    """
    cfg = cfg or CorrelationConfig()
    known_ids, unknown_ids = _split(panel, known, k)
    rho, _, valid = pairwise_pcc(panel.values, panel.mask, cfg.min_overlap)
    dist = np.where(valid, mfp_from_rho(np.nan_to_num(rho), cfg), np.nan)
    return _assign(panel, known, k, dist, known_ids, unknown_ids)
