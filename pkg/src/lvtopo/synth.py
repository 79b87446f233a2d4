"""Synthetic LV networks, load/PV profiles and a per-phase radial power flow.

Everything here is a pure function of its inputs and seed. The generated
networks stand in for measured feeders: they carry ground-truth feeder,
phase and switch labels, so every pipeline stage can be scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from lvtopo.errors import DataError, PowerFlowError
from lvtopo.model import (
    DEFAULT_START,
    PHASES,
    Feeder,
    LabelSet,
    Line,
    Meter,
    NetworkTopology,
    Node,
    SwitchBar,
    Transformer,
    VoltagePanel,
    validate_topology,
)

VARIANTS = ("CN1", "CN2", "SN", "SNL", "SNB")
PHASE_MODES = ("single-phase", "three-phase non-uniform")
NOMINAL_V = 230.0

# Feeder classes: node spacing (m), branch count, whether branches may
# sprout sub-branches, share of nodes on the main line, and the leading
# share of the main line where branches may start. Simple classes branch
# near the head, so their depth stays below the complex main line.
FEEDER_CLASSES = {
    "complex": dict(spacing_m=40.0, branches=4, sub_branches=True, main_share=0.45, anchor_span=1.0),
    "simple": dict(spacing_m=15.0, branches=2, sub_branches=False, main_share=0.4, anchor_span=0.25),
    "simple_long": dict(spacing_m=25.0, branches=2, sub_branches=False, main_share=0.4,
                        anchor_span=0.25),
    "simple_branchy": dict(spacing_m=15.0, branches=5, sub_branches=False, main_share=0.4,
                           anchor_span=0.5),
}

VARIANT_FEEDERS = {
    "CN1": ("complex", "complex", "complex"),
    "CN2": ("simple", "complex", "complex"),
    "SN": ("simple", "simple", "simple"),
    "SNL": ("simple_long", "simple_long", "simple_long"),
    "SNB": ("simple_branchy", "simple_branchy", "simple_branchy"),
}


@dataclass(frozen=True)
class NetworkTemplate:
    """Shape of a synthetic network.

    ``phase_mode='single-phase'`` puts every customer on phase A;
    ``'three-phase non-uniform'`` spreads single-phase customers non-uniformly over
    A/B/C (``phase_weights``) and gives ``three_phase_share`` of customers
    three co-located meters.
    """

    variant: str = "CN1"
    feeder_count: int = 2
    customers_per_feeder: int = 49
    per_node_connection: str = "single"
    phase_mode: str = "single-phase"
    three_phase_share: float = 0.0
    phase_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    r_ohm_per_km: float = 0.3
    x_ohm_per_km: float = 0.08
    transformer_r_ohm: float = 0.0035
    transformer_x_ohm: float = 0.0155
    shared_bus: bool = False
    switch_bar: bool = True
    backup_taps: tuple[float, ...] = (0.0,)
    tie_r_ohm: float = 0.06
    tie_x_ohm: float = 0.016

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        if not 1 <= self.feeder_count <= 3:
            raise DataError("feeder_count must be 1, 2 or 3")
        if self.customers_per_feeder < 1:
            raise DataError("customers_per_feeder must be >= 1")
        if self.per_node_connection not in ("single", "multiple"):
            raise DataError("per_node_connection must be 'single' or 'multiple'")
        if self.phase_mode == "three-phase":
            object.__setattr__(self, "phase_mode", "three-phase non-uniform")
        if self.phase_mode not in PHASE_MODES:
            raise DataError(f"phase_mode must be one of {', '.join(PHASE_MODES)}")
        if not 0.0 <= self.three_phase_share <= 1.0:
            raise DataError("three_phase_share must be in [0, 1]")

    def feeder_classes(self) -> tuple[str, ...]:
        return VARIANT_FEEDERS[self.variant][: self.feeder_count]


@dataclass(frozen=True)
class ProfileConfig:
    """Load, PV and MV-side variation model.

    Household load is a per-customer base times a shared daily shape times
    a lognormal AR(1) idiosyncratic factor. PV follows a truncated-cosine
    daylight curve scaled by one clear-sky factor per day shared by the
    whole area. The MV side adds a slow shared sinusoid plus a mean-reverting
    random walk to every transformer's nominal voltage. ``background_kw``
    is unmetered load per transformer phase (other feeders of the same
    transformer); it only reaches the metered feeders through the
    transformer impedance.
    """

    days: int = 14
    resolution_minutes: int = 15
    base_load_kw: float = 0.4
    load_noise_sd: float = 0.6
    load_ar: float = 0.8
    daily_shape_amplitude: float = 0.1
    pv_penetration: float = 0.0
    pv_peak_kw: float = 3.0
    season: str = "winter"
    power_factor: float = 1.0
    mv_amplitude: float = 0.002
    mv_period_days: float = 3.0
    mv_walk_sd: float = 0.0001
    phase_unbalance_sd: float = 0.004
    background_kw: float = 80.0
    background_noise_sd: float = 0.5
    rng_seed: int = 0
    start: datetime = DEFAULT_START

    def __post_init__(self):
        if self.days < 1:
            raise DataError("days must be positive")
        if 1440 % self.resolution_minutes:
            raise DataError("resolution_minutes must divide a day")
        if self.season not in ("winter", "summer"):
            raise DataError("season must be 'winter' or 'summer'")
        if not 0 <= self.pv_penetration <= 1:
            raise DataError("pv_penetration must be in [0, 1]")
        if not 0 < self.power_factor <= 1:
            raise DataError("power_factor must be in (0, 1]")

    @property
    def steps_per_day(self) -> int:
        return 1440 // self.resolution_minutes

    @property
    def n_steps(self) -> int:
        return self.days * self.steps_per_day


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


def _group_sizes(n: int, multiple: bool, rng) -> list[int]:
    if not multiple:
        return [1] * n
    sizes = []
    left = n
    while left > 0:
        s = int(rng.integers(2, 7))
        s = min(s, left)
        sizes.append(s)
        left -= s
    if len(sizes) > 1 and sizes[-1] == 1:
        for i in range(len(sizes) - 2, -1, -1):
            if sizes[i] < 6:
                sizes[i] += 1
                sizes.pop()
                break
    return sizes


def _tree_parents(n_nodes: int, cls: dict, rng) -> list[int]:
    """Parent index per node (-1 = transformer): a main line plus branches."""
    n_main = max(1, min(n_nodes, int(round(cls["main_share"] * n_nodes))))
    parents = [-1] + list(range(n_main - 1))
    rest = n_nodes - n_main
    n_br = min(cls["branches"], rest)
    if n_br == 0:
        return parents
    lengths = np.full(n_br, rest // n_br)
    lengths[: rest % n_br] += 1
    # Branch origins spread along the main line, skipping the head node.
    lo = min(1, n_main - 1)
    hi = max(lo + 1, int(math.ceil(cls["anchor_span"] * n_main)))
    anchors = sorted(rng.choice(np.arange(lo, hi), size=n_br, replace=n_br > hi - lo))
    branch_nodes: list[list[int]] = []
    for b, (length, anchor) in enumerate(zip(lengths, anchors)):
        origin = int(anchor)
        if cls["sub_branches"] and b % 2 == 1 and branch_nodes and len(branch_nodes[-1]) > 1:
            # hang every other branch off the middle of the previous one
            prev = branch_nodes[-1]
            origin = prev[len(prev) // 2]
        nodes = []
        for _ in range(length):
            parents.append(origin if not nodes else nodes[-1])
            nodes.append(len(parents) - 1)
        branch_nodes.append(nodes)
    return parents


def default_switch_catalog(k: int) -> tuple[tuple[int, ...], ...]:
    """States with exactly one open switch, the open position moving left:
    for three switches [1,1,0], [1,0,1], [0,1,1]."""
    if k == 1:
        return ((1,), (0,))
    out = []
    for open_pos in range(k - 1, -1, -1):
        out.append(tuple(0 if i == open_pos else 1 for i in range(k)))
    return tuple(out)


def build_network(tmpl: NetworkTemplate, rng_seed: int = 0) -> NetworkTopology:
    """Radial network per template; meter ids are opaque and shuffled."""
    rng = np.random.default_rng([int(rng_seed), 1])
    transformers = []
    feeders = []
    nodes: list[Node] = []
    lines: list[Line] = []
    customers: list[tuple[str, str, str, list[str]]] = []  # (customer, feeder, node, phases)
    feeder_ids = [f"F{i + 1}" for i in range(tmpl.feeder_count)]

    if tmpl.shared_bus:
        transformers.append(Transformer("T1", NOMINAL_V, tmpl.transformer_r_ohm, tmpl.transformer_x_ohm))
    for i, (fid, cls_name) in enumerate(zip(feeder_ids, tmpl.feeder_classes())):
        cls = FEEDER_CLASSES[cls_name]
        if tmpl.shared_bus:
            tr = "T1"
        else:
            tr = f"T{i + 1}"
            transformers.append(Transformer(tr, NOMINAL_V, tmpl.transformer_r_ohm, tmpl.transformer_x_ohm))
        feeders.append(Feeder(fid, tr))
        sizes = _group_sizes(tmpl.customers_per_feeder, tmpl.per_node_connection == "multiple", rng)
        parents = _tree_parents(len(sizes), cls, rng)
        dist = []
        for j, p in enumerate(parents):
            length = cls["spacing_m"] * float(rng.uniform(0.8, 1.2))
            dist.append(length + (dist[p] if p >= 0 else 0.0))
            nid = f"{fid}-n{j:03d}"
            nodes.append(Node(nid, fid, round(dist[j], 3), int(sizes[j])))
            r = tmpl.r_ohm_per_km * length / 1000.0
            x = tmpl.x_ohm_per_km * length / 1000.0
            lines.append(Line(tr if p < 0 else f"{fid}-n{p:03d}", nid, (r, r, r), (x, x, x)))
        phases = _phase_plan(tmpl, rng)
        c = 0
        for j, s in enumerate(sizes):
            for _ in range(s):
                customers.append((f"{fid}-c{c:03d}", fid, f"{fid}-n{j:03d}", phases[c]))
                c += 1

    # Opaque meter ids in random order so ids carry no feeder information.
    n_meters = sum(len(p) for *_, p in customers)
    numbers = rng.permutation(n_meters) + 1
    width = max(4, len(str(n_meters)))
    meters = {}
    k = 0
    for cust, fid, nid, phs in customers:
        for ph in phs:
            meters[f"M{numbers[k]:0{width}d}"] = Meter(nid, ph, fid, cust)
            k += 1
    meters = dict(sorted(meters.items()))

    bars = ()
    if tmpl.switch_bar:
        bars = (SwitchBar("B1", tmpl.feeder_count, tuple(feeder_ids),
                          default_switch_catalog(tmpl.feeder_count)),)
        main = transformers[0]
        for i, fid in enumerate(feeder_ids):
            tap = tmpl.backup_taps[i % len(tmpl.backup_taps)]
            transformers.append(Transformer(
                f"TB{i + 1}", round(NOMINAL_V * (1.0 + tap), 6), main.r_ohm, main.x_ohm))
    topo = NetworkTopology(tuple(transformers), tuple(feeders), tuple(nodes), tuple(lines),
                           meters, bars)
    problems = validate_topology(topo)
    if problems:  # generator bug, not user error
        raise AssertionError(f"generated topology invalid: {problems}")
    return topo


def _phase_plan(tmpl: NetworkTemplate, rng) -> list[list[str]]:
    n = tmpl.customers_per_feeder
    if tmpl.phase_mode == "single-phase":
        return [["A"] for _ in range(n)]
    n3 = int(round(tmpl.three_phase_share * n))
    n1 = n - n3
    w = np.asarray(tmpl.phase_weights, float)
    w = w[rng.permutation(3)] / w.sum()
    counts = np.floor(w * n1).astype(int)
    for i in np.argsort(-(w * n1 - counts))[: n1 - counts.sum()]:
        counts[i] += 1
    single = [p for p, c in zip(PHASES, counts) for _ in range(c)]
    plan = [[p] for p in single] + [list(PHASES) for _ in range(n3)]
    return [plan[i] for i in rng.permutation(n)]


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------


def _daily_shape(hours: np.ndarray) -> np.ndarray:
    """Shared household shape with unit mean: low night, morning and evening peaks."""
    morning = np.exp(-0.5 * ((hours - 7.5) / 1.2) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 2.0) ** 2)
    shape = 0.2 + 0.5 * morning + 1.0 * evening
    return shape / shape.mean()


def _daylight(hours: np.ndarray, season: str) -> np.ndarray:
    sunrise, sunset, peak = (5.5, 21.5, 1.0) if season == "summer" else (8.5, 16.5, 0.15)
    x = (hours - sunrise) / (sunset - sunrise)
    return np.where((x > 0) & (x < 1), peak * np.sin(np.pi * np.clip(x, 0, 1)) ** 2, 0.0)


def _ar1(rng, shape, phi: float) -> np.ndarray:
    """Unit-variance AR(1) along the last axis."""
    eps = rng.standard_normal(shape)
    out = np.empty(shape)
    out[..., 0] = eps[..., 0]
    s = math.sqrt(1.0 - phi * phi)
    for t in range(1, shape[-1]):
        out[..., t] = phi * out[..., t - 1] + s * eps[..., t]
    return out


@dataclass
class Profiles:
    """Per-meter active power (kW) and the per-phase (3 x T) source deviation in pu."""

    loads_kw: np.ndarray
    pv_kw: np.ndarray
    source_pu: np.ndarray
    pv_shape: np.ndarray
    load_shape: np.ndarray
    background_kw: dict[str, np.ndarray] = field(default_factory=dict)


def generate_profiles(topo: NetworkTopology, cfg: ProfileConfig) -> Profiles:
    rng = np.random.default_rng([int(cfg.rng_seed), 2])
    t = cfg.n_steps
    hours = (np.arange(t) % cfg.steps_per_day) * cfg.resolution_minutes / 60.0
    hours = hours + cfg.resolution_minutes / 120.0
    shape = 1.0 + cfg.daily_shape_amplitude * (_daily_shape(hours) - 1.0)

    meter_ids = list(topo.meters)
    cust_ids = sorted({m.customer or mid for mid, m in topo.meters.items()})
    n_c = len(cust_ids)
    base = cfg.base_load_kw * rng.lognormal(0.0, 0.3, n_c)
    sigma = cfg.load_noise_sd
    idio = np.exp(sigma * _ar1(rng, (n_c, t), cfg.load_ar) - 0.5 * sigma * sigma)
    cust_load = base[:, None] * shape[None] * idio

    has_pv = rng.random(n_c) < cfg.pv_penetration
    cap = np.where(has_pv, cfg.pv_peak_kw * rng.uniform(0.7, 1.3, n_c), 0.0)
    clear = np.repeat(rng.uniform(0.3, 1.0, cfg.days), cfg.steps_per_day)
    cloud = np.clip(1.0 + 0.1 * _ar1(rng, (t,), 0.9), 0.5, 1.2)
    pv_shape = _daylight(hours, cfg.season) * clear * cloud
    cust_pv = cap[:, None] * pv_shape[None]

    # Split three-phase customers' load unevenly over their phases; PV evenly.
    cidx = {c: i for i, c in enumerate(cust_ids)}
    members: dict[str, list[str]] = {}
    for mid, m in topo.meters.items():
        members.setdefault(m.customer or mid, []).append(mid)
    loads = np.zeros((len(meter_ids), t))
    pv = np.zeros_like(loads)
    row = {m: i for i, m in enumerate(meter_ids)}
    for c in cust_ids:
        ms = members[c]
        share = rng.dirichlet(np.full(len(ms), 2.0)) if len(ms) > 1 else np.ones(1)
        for m, s in zip(ms, share):
            loads[row[m]] = cust_load[cidx[c]] * s
            pv[row[m]] = cust_pv[cidx[c]] / len(ms)

    days = np.arange(t) * cfg.resolution_minutes / 1440.0
    phase0 = rng.uniform(0, 2 * np.pi)
    walk = cfg.mv_walk_sd * np.cumsum(rng.standard_normal(t))
    walk -= np.convolve(walk, np.ones(cfg.steps_per_day) / cfg.steps_per_day, mode="same")
    source = cfg.mv_amplitude * np.sin(2 * np.pi * days / cfg.mv_period_days + phase0) + walk
    # Phase-specific MV unbalance, the same on every transformer of the area.
    source = source[None, :] + cfg.phase_unbalance_sd * _ar1(rng, (3, t), 0.9)

    background = {}
    bsd = cfg.background_noise_sd
    for tr in sorted(tr.id for tr in topo.transformers):
        factor = np.exp(bsd * _ar1(rng, (3, t), cfg.load_ar) - 0.5 * bsd * bsd)
        background[tr] = cfg.background_kw * shape[None] * factor
    return Profiles(loads, pv, source, pv_shape, shape, background)


# ---------------------------------------------------------------------------
# Power flow
# ---------------------------------------------------------------------------


def solve_power_flow(
    topo: NetworkTopology,
    loads_kw: np.ndarray,
    pv_kw: np.ndarray | None = None,
    source_pu: np.ndarray | None = None,
    power_factor: float = 1.0,
    tol_pu: float = 1e-9,
    max_iter: int = 100,
    start: datetime = DEFAULT_START,
    resolution_minutes: int = 15,
    steps: np.ndarray | None = None,
    background_kw: dict[str, np.ndarray] | None = None,
) -> VoltagePanel:
    """Per-phase backward/forward sweep with constant-power loads.

    ``loads_kw``/``pv_kw`` are (meters x T) in ``topo.meters`` order; the net
    consumption is load - PV. Each transformer is an ideal source at
    ``nominal * (1 + source_pu[phase, t])`` behind its series impedance;
    ``source_pu`` may be (T,) for a balanced source or (3, T). Phases are
    solved independently (no mutual coupling). ``background_kw`` maps a
    transformer id to a (3, T) unmetered load drawn at its secondary bus.
    Iterates until the largest
    voltage update is below ``tol_pu`` of 230 V.
    """
    problems = [p for p in validate_topology(topo) if "not a tree" in p or "parent" in p]
    if problems:
        raise PowerFlowError(f"non-radial network: {problems}")
    meter_ids = list(topo.meters)
    loads_kw = np.atleast_2d(np.asarray(loads_kw, dtype=float))
    n_m, t = loads_kw.shape
    if n_m != len(meter_ids):
        raise DataError(f"loads have {n_m} rows for {len(meter_ids)} meters")
    pv_kw = np.zeros_like(loads_kw) if pv_kw is None else np.asarray(pv_kw, dtype=float)
    if pv_kw.shape != loads_kw.shape:
        raise DataError("pv and load arrays differ in shape")
    source_pu = np.zeros(t) if source_pu is None else np.asarray(source_pu, dtype=float)
    source_pu = np.broadcast_to(source_pu, (3, t))

    used_tr = sorted({f.transformer for f in topo.feeders})
    tr_index = {tid: i for i, tid in enumerate(used_tr)}
    node_ids = [n.id for n in topo.nodes]
    vidx = {tid: i for i, tid in enumerate(used_tr)}
    vidx.update({nid: len(used_tr) + i for i, nid in enumerate(node_ids)})
    nv = len(vidx)
    parent = np.full(nv, -1)
    z = np.zeros((3, nv), dtype=complex)
    for tid in used_tr:
        tr = topo.transformer_by_id[tid]
        z[:, vidx[tid]] = complex(tr.r_ohm, tr.x_ohm)
    for ln in topo.lines:
        c = vidx[ln.to_node]
        parent[c] = vidx[ln.from_node]
        z[:, c] = np.array(ln.r_ohm) + 1j * np.array(ln.x_ohm)
    depth = np.zeros(nv, dtype=int)
    for nid in node_ids:  # nodes are few; walk up to the bus
        v = vidx[nid]
        d = 0
        while parent[v] >= 0:
            v = parent[v]
            d += 1
        depth[vidx[nid]] = d
    levels = [np.flatnonzero(depth == d) for d in range(1, depth.max() + 1)] if nv > len(used_tr) else []

    tan_phi = math.tan(math.acos(power_factor))
    s_inj = np.zeros((3, nv, t), dtype=complex)
    p_w = 1000.0 * (loads_kw - pv_kw)
    q_var = 1000.0 * loads_kw * tan_phi
    for i, mid in enumerate(meter_ids):
        m = topo.meters[mid]
        s_inj[PHASES.index(m.phase), vidx[m.node]] += p_w[i] + 1j * q_var[i]

    for tid, bg in (background_kw or {}).items():
        if tid in tr_index:
            bg = np.broadcast_to(np.asarray(bg, dtype=float), (3, t))
            s_inj[:, tr_index[tid]] += 1000.0 * bg * (1.0 + 1j * tan_phi)

    bus = np.arange(len(used_tr))
    v_src = np.zeros((3, len(used_tr), t), dtype=complex)
    for tid in used_tr:
        nominal = topo.transformer_by_id[tid].nominal_voltage
        v_src[:, tr_index[tid]] = nominal * (1.0 + source_pu)
    v = np.empty((3, nv, t), dtype=complex)
    v[:, bus] = v_src
    for lev in levels:
        v[:, lev] = v[:, parent[lev]]
    tol = tol_pu * NOMINAL_V
    for _ in range(max_iter):
        cur = np.conj(s_inj / v)
        for lev in reversed(levels):
            np.add.at(cur, (slice(None), parent[lev]), cur[:, lev])
        new = np.empty_like(v)
        new[:, bus] = v_src - z[:, bus, None] * cur[:, bus]
        for lev in levels:
            new[:, lev] = new[:, parent[lev]] - z[:, lev, None] * cur[:, lev]
        delta = np.abs(new - v)
        v = new
        if delta.max() < tol:
            break
        if not np.all(np.isfinite(v)) or np.min(np.abs(v)) < 0.2 * NOMINAL_V:
            break
    else:
        delta = None
    if delta is None or not np.all(np.isfinite(v)) or delta.max() >= tol:
        worst = np.nanargmax(np.where(np.isfinite(np.abs(v)), -np.abs(v), np.inf).max(axis=(0, 2))) \
            if np.all(np.isfinite(v)) else int(np.argmax(~np.isfinite(v).all(axis=(0, 2))))
        name = {i: k for k, i in vidx.items()}[int(worst)]
        raise PowerFlowError(f"power flow did not converge in {max_iter} iterations; worst node {name}")

    mag = np.empty((n_m, t))
    for i, mid in enumerate(meter_ids):
        m = topo.meters[mid]
        mag[i] = np.abs(v[PHASES.index(m.phase), vidx[m.node]])
    return VoltagePanel(values=mag, mask=np.ones_like(mag, bool), meter_ids=tuple(meter_ids),
                        resolution_minutes=resolution_minutes, start=start, steps=steps)


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------


def inject_missing(panel: VoltagePanel, fraction: float, mode: str = "random_points",
                   rng_seed: int = 0) -> VoltagePanel:
    """Clear the mask on floor(fraction*N*T) random cells, or on every cell of
    floor(fraction*N) random meters. Values are left as they were."""
    if not 0 <= fraction < 1:
        raise DataError("fraction must be in [0, 1)")
    rng = np.random.default_rng(rng_seed)
    n, t = panel.values.shape
    mask = panel.mask.copy()
    if mode == "random_points":
        k = int(math.floor(fraction * n * t))
        cells = rng.choice(n * t, size=k, replace=False)
        mask.flat[cells] = False
    elif mode == "whole_meters":
        k = int(math.floor(fraction * n))
        mask[rng.choice(n, size=k, replace=False)] = False
    else:
        raise DataError(f"unknown missing-data mode {mode!r}")
    return panel.replace(mask=mask)


def inject_noise(panel: VoltagePanel, sd_volts: float, rng_seed: int = 0) -> VoltagePanel:
    """Independent zero-mean Gaussian error on observed cells only."""
    if sd_volts < 0:
        raise DataError("sd_volts must be >= 0")
    if sd_volts == 0:
        return panel
    rng = np.random.default_rng(rng_seed)
    noise = rng.normal(0.0, sd_volts, panel.values.shape)
    return panel.replace(values=np.where(panel.mask, panel.values + noise, panel.values))


# ---------------------------------------------------------------------------
# Switch schedules
# ---------------------------------------------------------------------------


def schedule_switch_states(bar: SwitchBar, days: int, dwell_range: tuple[int, int],
                           rng_seed: int = 0, steps_per_day: int = 96,
                           weights=None) -> np.ndarray:
    """Piecewise-constant class labels, one per timestep.

    Dwell times are uniform on ``dwell_range`` (timesteps, inclusive). Without
    ``weights`` every new segment switches to a different state; with weights
    each segment's state is drawn independently from them.
    """
    lo, hi = (int(v) for v in dwell_range)
    if lo < 1 or hi < lo:
        raise DataError("dwell_range must be positive with lo <= hi")
    j = bar.n_classes
    if weights is not None:
        w = np.asarray(weights, float)
        if w.shape != (j,) or np.any(w < 0) or w.sum() <= 0:
            raise DataError("weights must be nonnegative, one per state")
        w = w / w.sum()
    rng = np.random.default_rng(rng_seed)
    total = days * steps_per_day
    out = np.empty(total, dtype=int)
    pos = 0
    state = int(rng.integers(j)) if weights is None else int(rng.choice(j, p=w))
    while pos < total:
        dwell = int(rng.integers(lo, hi + 1))
        out[pos: pos + dwell] = state
        pos += dwell
        if weights is None and j > 1:
            state = int((state + rng.integers(1, j)) % j)
        elif weights is not None:
            state = int(rng.choice(j, p=w))
    return out


def topology_for_state(topo: NetworkTopology, bar: SwitchBar, state,
                       tie_r_ohm: float = 0.06, tie_x_ohm: float = 0.016) -> NetworkTopology:
    """Feeders whose switch is open are fed from their backup transformer
    ``TB<k>`` through a tie cable added in series with the head line."""
    state = bar.decode(bar.encode(state))
    pos = {fid: i for i, fid in enumerate(bar.feeder_ids)}
    feeders = []
    for f in topo.feeders:
        if f.id in pos and state[pos[f.id]] == 0:
            feeders.append(Feeder(f.id, f"TB{pos[f.id] + 1}"))
        else:
            feeders.append(f)
    lines = []
    new_root = {f.id: f.transformer for f in feeders}
    trs = {t.id for t in topo.transformers}
    for ln in topo.lines:
        if ln.from_node in trs:
            fid = topo.node_by_id[ln.to_node].feeder
            if new_root[fid] != ln.from_node:
                ln = Line(new_root[fid], ln.to_node,
                          tuple(r + tie_r_ohm for r in ln.r_ohm),
                          tuple(x + tie_x_ohm for x in ln.x_ohm))
        lines.append(ln)
    return topo.replace(feeders=tuple(feeders), lines=tuple(lines))


# ---------------------------------------------------------------------------
# Whole datasets
# ---------------------------------------------------------------------------


@dataclass
class SyntheticDataset:
    topology: NetworkTopology
    panel: VoltagePanel
    profiles: Profiles
    switch_labels: np.ndarray | None
    template: NetworkTemplate
    profile: ProfileConfig
    seed: int

    def feeder_truth(self) -> LabelSet:
        return self.topology.feeder_labels()

    def phase_truth(self) -> LabelSet:
        return self.topology.phase_labels()


def generate_dataset(
    tmpl: NetworkTemplate,
    profile: ProfileConfig,
    seed: int = 0,
    switching: bool = False,
    dwell_range: tuple[int, int] = (96, 288),
    switch_weights=None,
) -> SyntheticDataset:
    """Network, profiles and the clean voltage panel for one seed.

    With ``switching`` the bar's state follows a random schedule and each
    run of constant state is solved on the corresponding topology.
    """
    topo = build_network(tmpl, seed)
    prof = generate_profiles(topo, replace(profile, rng_seed=seed))
    labels = None
    kw = dict(pv_kw=prof.pv_kw, source_pu=prof.source_pu, power_factor=profile.power_factor,
              start=profile.start, resolution_minutes=profile.resolution_minutes,
              background_kw=prof.background_kw)
    if switching:
        if not topo.switch_bars:
            raise DataError("switching requested but the template has no switch bar")
        bar = topo.switch_bars[0]
        labels = schedule_switch_states(bar, profile.days, dwell_range, seed + 7,
                                        profile.steps_per_day, switch_weights)
        values = np.empty((len(topo.meters), profile.n_steps))
        for j in range(bar.n_classes):
            cols = np.flatnonzero(labels == j)
            if cols.size == 0:
                continue
            sub = topology_for_state(topo, bar, bar.decode(j), tmpl.tie_r_ohm, tmpl.tie_x_ohm)
            p = solve_power_flow(sub, prof.loads_kw[:, cols], pv_kw=prof.pv_kw[:, cols],
                                 source_pu=prof.source_pu[:, cols], power_factor=profile.power_factor,
                                 background_kw={k: b[:, cols] for k, b in prof.background_kw.items()})
            values[:, cols] = p.values
        panel = VoltagePanel(values=values, mask=np.ones_like(values, bool),
                             meter_ids=tuple(topo.meters), resolution_minutes=profile.resolution_minutes,
                             start=profile.start)
    else:
        panel = solve_power_flow(topo, prof.loads_kw, **kw)
    return SyntheticDataset(topo, panel, prof, labels, tmpl, profile, seed)
