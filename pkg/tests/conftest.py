import numpy as np
import pytest

from lvtopo.model import (
    Feeder,
    Line,
    Meter,
    NetworkTopology,
    Node,
    Transformer,
    VoltagePanel,
)


def make_panel(values, mask=None, ids=None, **kw) -> VoltagePanel:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if mask is None:
        mask = np.ones_like(values, bool)
    if ids is None:
        ids = [f"m{i}" for i in range(values.shape[0])]
    return VoltagePanel(values=values, mask=mask, meter_ids=tuple(ids), **kw)


def two_bus(r=0.05, x=0.02, tr_r=0.0, tr_x=0.0, phase="A") -> NetworkTopology:
    """Transformer -> one line -> one node with one meter."""
    return NetworkTopology(
        transformers=(Transformer("T1", 230.0, tr_r, tr_x),),
        feeders=(Feeder("F1", "T1"),),
        nodes=(Node("N1", "F1", 100.0),),
        lines=(Line("T1", "N1", (r, r, r), (x, x, x)),),
        meters={"M1": Meter("N1", phase, "F1")},
    )


def random_radial(rng: np.random.Generator, n_nodes: int, n_meters: int) -> NetworkTopology:
    """Random tree on one feeder with meters on random nodes and phases."""
    nodes, lines = [], []
    for i in range(n_nodes):
        parent = "T1" if i == 0 else f"N{int(rng.integers(i))}"
        nodes.append(Node(f"N{i}", "F1", float(10 * (i + 1))))
        r = float(rng.uniform(0.001, 0.02))
        x = float(rng.uniform(0.0, 0.01))
        lines.append(Line(parent, f"N{i}", (r, r, r), (x, x, x)))
    meters = {
        f"M{j:03d}": Meter(f"N{int(rng.integers(n_nodes))}", "ABC"[int(rng.integers(3))], "F1")
        for j in range(n_meters)
    }
    return NetworkTopology(
        transformers=(Transformer("T1", 230.0, 0.003, 0.01),),
        feeders=(Feeder("F1", "T1"),),
        nodes=tuple(nodes),
        lines=tuple(lines),
        meters=meters,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
