"""Topology correction for low-voltage distribution networks from smart-meter voltages.

The pipeline has three stages: switch-state classification, user-feeder
identification and per-feeder phase identification. A synthetic network
generator with a three-phase radial power flow supplies labelled data for
every stage.
"""

from lvtopo.model import (
    DistanceMatrix,
    Feeder,
    LabelSet,
    Line,
    Meter,
    NetworkTopology,
    Node,
    SwitchBar,
    Transformer,
    VoltagePanel,
    time_of_day_index,
    validate_topology,
)

__version__ = "0.1.0"

__all__ = [
    "DistanceMatrix",
    "Feeder",
    "LabelSet",
    "Line",
    "Meter",
    "NetworkTopology",
    "Node",
    "SwitchBar",
    "Transformer",
    "VoltagePanel",
    "time_of_day_index",
    "validate_topology",
]
