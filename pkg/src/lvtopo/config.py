"""Run configuration: TOML sections mapped onto the library's config types.

A config file has an optional top-level ``seed`` and the sections
``[network]``, ``[profiles]``, ``[selection]``, ``[forest]``,
``[correlation]`` and ``[pipeline]``. Unknown sections or keys are errors
reported with their line number.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from lvtopo.correlate import CorrelationConfig
from lvtopo.errors import ConfigError, LvtopoError
from lvtopo.model import read_panel_csv
from lvtopo.selection import TimeWindow
from lvtopo.switchid import ForestConfig
from lvtopo.synth import NetworkTemplate, ProfileConfig


def derive_seed(seed: int, stage: str) -> int:
    """Stable 63-bit sub-seed for one named stage."""
    h = hashlib.blake2b(f"{int(seed)}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") & ((1 << 63) - 1)


@dataclass(frozen=True)
class ScenarioConfig:
    """How the synthetic dataset is exercised and corrupted."""

    switching: bool = False
    dwell_min: int = 96
    dwell_max: int = 288
    sm_noise_sd: float = 0.0
    missing_fraction: float = 0.0
    missing_mode: str = "random_points"


@dataclass(frozen=True)
class SelectionConfig:
    time_filter: bool = False
    mode: str = "fixed"
    t1: int = 20
    t2: int = 88
    window_sense: str = "outside"
    max_sm_per_feeder: int | None = None
    pv_ref_csv: str | None = None      # dynamic mode: reference PV series
    load_ref_csv: str | None = None    # dynamic mode: reference load series

    def window(self, pv_ref=None, load_ref=None) -> TimeWindow:
        if self.mode == "dynamic" and pv_ref is None and load_ref is None:
            if not (self.pv_ref_csv and self.load_ref_csv):
                raise ConfigError("dynamic time window needs pv_ref_csv and load_ref_csv")
            pv_ref = _reference_series(self.pv_ref_csv)
            load_ref = _reference_series(self.load_ref_csv)
            n = max(pv_ref.size, load_ref.size)
            pv_ref = np.pad(pv_ref, (0, n - pv_ref.size), constant_values=np.inf)
            load_ref = np.pad(load_ref, (0, n - load_ref.size))
        return TimeWindow(self.mode, self.t1, self.t2, self.window_sense, pv_ref, load_ref)


def _reference_series(path) -> np.ndarray:
    """Row-sum of a panel-layout CSV, indexed by absolute step."""
    panel = read_panel_csv(path)
    out = np.zeros(int(panel.steps.max()) + 1)
    out[panel.steps] = np.where(panel.mask, panel.values, 0.0).sum(axis=0)
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Stage options. ``method='auto'`` clusters without recordings and uses
    MFP assignment when a recordings file is given."""

    method: str = "auto"
    k: int = 1
    classifier: str = "rf"
    train_fraction: float = 0.7
    fill_invalid: bool = False
    high_confidence: float = 1.0
    threads: int = 1

    def __post_init__(self):
        if self.method not in ("auto", "cluster", "knn", "mfp"):
            raise ConfigError(f"method must be auto, cluster, knn or mfp, got {self.method!r}")
        if self.classifier not in ("rf", "gnb"):
            raise ConfigError(f"classifier must be rf or gnb, got {self.classifier!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    network: NetworkTemplate = field(default_factory=NetworkTemplate)
    profiles: ProfileConfig = field(default_factory=ProfileConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def to_dict(self) -> dict:
        def plain(obj):
            out = {}
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                if hasattr(v, "isoformat"):
                    v = v.isoformat()
                elif isinstance(v, tuple):
                    v = list(v)
                out[f.name] = v
            return out

        d = {"seed": self.seed}
        for name in ("network", "profiles", "scenario", "selection", "forest",
                     "correlation", "pipeline"):
            d[name] = plain(getattr(self, name))
        return d


# Which TOML section feeds which dataclass. Scenario keys live in the
# [network] (switching) and [profiles] (corruption) sections.
_SCENARIO_KEYS = {
    "network": ("switching", "dwell_min", "dwell_max"),
    "profiles": ("sm_noise_sd", "missing_fraction", "missing_mode"),
}
_SECTIONS = {
    "network": NetworkTemplate,
    "profiles": ProfileConfig,
    "selection": SelectionConfig,
    "forest": ForestConfig,
    "correlation": CorrelationConfig,
    "pipeline": PipelineConfig,
}
TOP_LEVEL_KEYS = ("seed",)


def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    """1-based line of ``key =`` (inside ``[section]`` when given)."""
    in_section = section is None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("["):
            in_section = section is not None and s.strip("[] ") == section
            continue
        if in_section and re.match(rf"{re.escape(key)}\s*=", s):
            return no
    return None


def _where(text, key, section=None) -> str:
    line = _line_of(text, key, section) if text else None
    return f"line {line}: " if line else ""


def _coerce(cls, name, value):
    if cls is NetworkTemplate and name in ("phase_weights", "backup_taps"):
        return tuple(float(v) for v in value)
    if cls is ForestConfig and name == "max_depth" and value in (0, "none", "None"):
        return None
    if cls is ProfileConfig and name == "start" and isinstance(value, str):
        try:
            return datetime.fromisoformat(value)
        except ValueError as exc:
            raise ConfigError(f"[profiles] start: {exc}") from exc
    return value


def config_document(cfg: RunConfig) -> dict:
    """Section-shaped, JSON-safe form of ``cfg`` that ``build_config`` reads back."""
    d = cfg.to_dict()
    scenario = d.pop("scenario")
    for section, keys in _SCENARIO_KEYS.items():
        for k in keys:
            d[section][k] = scenario[k]
    for section in _SECTIONS:
        d[section] = {k: v for k, v in d[section].items() if v is not None}
    if cfg.forest.max_depth is None:
        d["forest"]["max_depth"] = 0
    return d


def build_config(doc: dict, text: str = "", overrides: dict | None = None) -> RunConfig:
    """RunConfig from a parsed TOML document plus flag overrides.

    ``overrides`` maps ``"section.key"`` to a value; ``None`` values are ignored.
    """
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in doc.items()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section == "":
            doc[key] = value
        else:
            doc.setdefault(section, {})[key] = value

    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in _SECTIONS:
                raise ConfigError(f"{_line_or_blank(text, key)}unknown section [{key}]; "
                                  f"valid sections: {', '.join(_SECTIONS)}")
        elif key not in TOP_LEVEL_KEYS:
            raise ConfigError(f"{_where(text, key)}unknown top-level key {key!r}")

    built = {}
    scenario_kw = {}
    for section, cls in _SECTIONS.items():
        raw = dict(doc.get(section, {}))
        for k in _SCENARIO_KEYS.get(section, ()):
            if k in raw:
                scenario_kw[k] = raw.pop(k)
        names = {f.name for f in dataclasses.fields(cls)}
        for k in raw:
            if k not in names:
                raise ConfigError(f"{_where(text, k, section)}unknown key {k!r} in [{section}]; "
                                  f"valid keys: {', '.join(sorted(names | set(_SCENARIO_KEYS.get(section, ()))))}")
        try:
            built[section] = cls(**{k: _coerce(cls, k, v) for k, v in raw.items()})
        except ConfigError:
            raise
        except (LvtopoError, TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    try:
        scenario = ScenarioConfig(**scenario_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if scenario.dwell_min < 1 or scenario.dwell_max < scenario.dwell_min:
        raise ConfigError("need 1 <= dwell_min <= dwell_max")
    if not 0 <= scenario.missing_fraction < 1:
        raise ConfigError("missing_fraction must be in [0, 1)")
    if scenario.sm_noise_sd < 0:
        raise ConfigError("sm_noise_sd must be >= 0")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"{_where(text, 'seed')}seed must be an integer")
    return RunConfig(seed=seed, scenario=scenario, **built)


def _line_or_blank(text, section) -> str:
    for no, line in enumerate(text.splitlines(), 1):
        if line.strip().strip("[] ") == section and line.strip().startswith("["):
            return f"line {no}: "
    return ""


def parse_toml(text: str, source: str = "<config>") -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return build_config({}, "", overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return build_config(parse_toml(text, str(path)), text, overrides)
    except ConfigError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from exc
