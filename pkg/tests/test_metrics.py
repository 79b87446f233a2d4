import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvtopo.errors import MeterSetMismatch
from lvtopo.metrics import aligned_accuracy, confusion_matrix, purity
from lvtopo.model import LabelSet


def labels(seq, prefix="m"):
    return LabelSet.from_labels({f"{prefix}{i}": c for i, c in enumerate(seq)})


def restricted_growth(n: int, max_blocks: int):
    """Every partition of range(n) into at most max_blocks blocks, once each."""
    out = []

    def rec(prefix, top):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for c in range(min(top + 2, max_blocks)):
            rec(prefix + [c], max(top, c))

    rec([0], 0)
    return out


SIX = restricted_growth(6, 3)


def test_partition_count():
    # Stirling numbers S(6,1) + S(6,2) + S(6,3)
    assert len(SIX) == 1 + 31 + 90


class TestPurity:
    def test_worked_example(self):
        pred = labels(["x", "x", "x", "y", "y"])
        truth = labels(["a", "a", "b", "b", "b"])
        assert purity(pred, truth) == pytest.approx(0.8)

    def test_relabeling(self):
        assert purity(labels([5, 5, 9, 9]), labels(["a", "a", "b", "b"])) == 1.0

    def test_singletons(self):
        assert purity(labels(range(7)), labels([0, 1, 0, 1, 0, 1, 0])) == 1.0

    def test_subset(self):
        pred = labels([0, 0, 1, 1])
        truth = labels([0, 1, 1, 1])
        assert purity(pred, truth, meters=["m2", "m3"]) == 1.0


class TestAlignedAccuracy:
    def test_one_misgrouped(self):
        truth = [0] * 5 + [1] * 5
        pred = [1] * 5 + [0] * 4 + [1]
        assert aligned_accuracy(labels(pred), labels(truth)) == pytest.approx(0.9)

    def test_extra_cluster_counts_as_error(self):
        assert aligned_accuracy(labels([0, 0, 1, 2]), labels([0, 0, 1, 1])) == 0.75

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=20), st.permutations(range(4)))
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_relabeling(self, seq, perm):
        truth = labels(seq)
        relabeled = labels([perm[c] for c in seq])
        assert aligned_accuracy(relabeled, truth) == 1.0
        other = labels([c % 2 for c in seq])
        assert aligned_accuracy(other, truth) == aligned_accuracy(
            labels([perm[c % 2] for c in seq]), truth)


def test_exhaustive_six_element_identities():
    for p in SIX:
        pred = labels(p)
        for t in SIX:
            truth = labels(t)
            pu, acc = purity(pred, truth), aligned_accuracy(pred, truth)
            assert acc <= pu + 1e-12
            # both canonical forms: equal up to relabeling iff identical strings
            same = p == t
            assert (acc == 1.0) == same
            assert (pu == 1.0 and purity(truth, pred) == 1.0) == same


class TestConfusion:
    def test_layout(self):
        c = confusion_matrix(labels(["x", "x", "y"]), labels(["a", "b", "b"]))
        assert c.predicted == ("x", "y") and c.truth == ("a", "b")
        assert c.counts.tolist() == [[1, 1], [0, 1]]
        assert c.to_csv().splitlines()[0] == "predicted\\truth,a,b"

    def test_mismatch_lists_ids(self):
        with pytest.raises(MeterSetMismatch) as err:
            purity(labels([0, 1]), labels([0, 1], prefix="q"))
        assert err.value.only_predicted == ["m0", "m1"]
        assert err.value.only_truth == ["q0", "q1"]

    def test_unlabeled_meters_excluded(self):
        pred = LabelSet(labels={"a": 0}, known={"a": True, "b": False})
        with pytest.raises(MeterSetMismatch):
            purity(pred, labels([0, 0]))
        assert np.isclose(purity(pred, LabelSet.from_labels({"a": 3})), 1.0)
