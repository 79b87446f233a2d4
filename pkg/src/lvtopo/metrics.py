"""Scoring of label assignments against ground truth.

``aligned_accuracy`` is a reconstruction: clusters are matched one-to-one
to truth classes by an optimal assignment before counting hits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from lvtopo.errors import MeterSetMismatch
from lvtopo.model import LabelSet


def _order(values) -> list:
    try:
        return sorted(values)
    except TypeError:
        return sorted(values, key=str)


@dataclass(frozen=True)
class Confusion:
    """Counts with rows = predicted clusters, columns = truth classes."""

    counts: np.ndarray
    predicted: tuple
    truth: tuple

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        head = "predicted\\truth," + ",".join(str(t) for t in self.truth)
        rows = [f"{p}," + ",".join(str(int(c)) for c in row)
                for p, row in zip(self.predicted, self.counts)]
        return "\n".join([head, *rows]) + "\n"


def _paired(predicted: LabelSet, truth: LabelSet, meters=None) -> tuple[list, list]:
    p_ids = {m for m in predicted.meter_ids if m in predicted.labels}
    t_ids = {m for m in truth.meter_ids if m in truth.labels}
    if meters is not None:
        meters = set(meters)
        p_ids &= meters
        t_ids &= meters
    if p_ids != t_ids:
        raise MeterSetMismatch(p_ids - t_ids, t_ids - p_ids)
    ids = sorted(p_ids)
    if not ids:
        raise MeterSetMismatch(set(), set())
    return [predicted.labels[m] for m in ids], [truth.labels[m] for m in ids]


def confusion_matrix(predicted: LabelSet, truth: LabelSet, meters=None) -> Confusion:
    """Contingency table over the shared meter set (optionally a subset)."""
    p, t = _paired(predicted, truth, meters)
    pc, tc = _order(set(p)), _order(set(t))
    pi = {c: i for i, c in enumerate(pc)}
    ti = {c: i for i, c in enumerate(tc)}
    counts = np.zeros((len(pc), len(tc)), dtype=int)
    for a, b in zip(p, t):
        counts[pi[a], ti[b]] += 1
    return Confusion(counts, tuple(pc), tuple(tc))


def purity(predicted: LabelSet, truth: LabelSet, meters=None) -> float:
    """Share of meters in the majority truth class of their cluster."""
    c = confusion_matrix(predicted, truth, meters)
    return float(c.counts.max(axis=1).sum() / c.n)


def aligned_accuracy(predicted: LabelSet, truth: LabelSet, meters=None) -> float:
    """Accuracy after the best one-to-one matching of clusters to classes.

    Clusters left unmatched (more clusters than classes) count as errors.
    """
    c = confusion_matrix(predicted, truth, meters)
    rows, cols = linear_sum_assignment(-c.counts)
    return float(c.counts[rows, cols].sum() / c.n)


def run_experiment(spec, threads: int = 1, heatmap_dir=None):
    """Run an experiment file (path or parsed spec); see ``lvtopo.experiment``."""
    from lvtopo.experiment import ExperimentSpec, load_experiment
    from lvtopo.experiment import run_experiment as _run

    if not isinstance(spec, ExperimentSpec):
        spec = load_experiment(spec)
    return _run(spec, threads=threads, heatmap_dir=heatmap_dir)
