"""Scenario configuration.

A scenario file is YAML mirroring the dataclasses below; every field has a
default so a file only lists what it changes.  Prose-derived defaults: 30 s
data period, 120 s management period, 10-byte payloads, 10 h runs observed in
2-minute windows with the attack starting after 8 h.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .cpd import DetectorParams

ATTACK_KINDS = ("none", "fdff", "fni")
TAMPER_MODES = ("node_id", "metric")
NODE_METRICS = ("proc_time", "tx_time", "ctrl_rx", "ctrl_tx")
DEFAULT_WEIGHTS = ((1.0, 0.0), (0.8, 0.2), (0.5, 0.5), (0.2, 0.8), (0.0, 1.0))


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class TopologyConfig:
    side: int = 6
    spacing: float = 10.0
    radio_radius: float = 1.5

    def validate(self) -> None:
        if self.side < 3:
            raise ConfigError("topology.side: must be >= 3")
        if self.spacing <= 0:
            raise ConfigError("topology.spacing: must be positive")
        if self.radio_radius < 1.0:
            raise ConfigError("topology.radio_radius: must be >= 1 (grid must stay connected)")


@dataclass(frozen=True)
class TrafficConfig:
    data_period: float = 30.0
    mgmt_period: float = 120.0
    payload: int = 10

    def validate(self) -> None:
        if self.data_period <= 0:
            raise ConfigError("traffic.data_period: must be positive")
        if self.mgmt_period <= 0:
            raise ConfigError("traffic.mgmt_period: must be positive")
        if self.payload < 0:
            raise ConfigError("traffic.payload: must be non-negative")


@dataclass(frozen=True)
class NetworkConfig:
    """Radio, control-plane and cost-model knobs."""

    loss_probability: float = 0.02
    ttl: int = 64
    table_capacity: int = 32
    # neighbour probing: link metric resampled every probe_period seconds as
    # exp(metric_noise * N(0, 1)); a report goes out on a relative change >= report_threshold
    probe_period: float = 60.0
    metric_noise: float = 0.1
    report_threshold: float = 0.2
    # links reported below this quality are left out of the controller graph
    metric_floor: float = 0.5
    # installed routes are refreshed after a lifetime drawn uniformly from this range
    route_lifetime: tuple[float, float] = (300.0, 900.0)
    request_holdoff: float = 10.0
    # unanswered flow requests are resent every request_holdoff seconds, this many times
    request_retries: int = 3
    # push changed routes as soon as the controller's view changes; otherwise
    # nodes pick up new routes only through their own flow requests
    route_push: bool = True
    controller_delay: float = 0.005
    proc_ms_per_packet: float = 1.0
    tx_ms_per_16_bytes: float = 0.5
    header_bytes: int = 12

    def validate(self) -> None:
        if not 0.0 <= self.loss_probability < 1.0:
            raise ConfigError("network.loss_probability: must lie in [0, 1)")
        if self.ttl < 1:
            raise ConfigError("network.ttl: must be >= 1")
        if self.table_capacity < 4:
            raise ConfigError("network.table_capacity: must hold at least the route entries (4)")
        lo, hi = self.route_lifetime
        if not 0 < lo <= hi:
            raise ConfigError("network.route_lifetime: need 0 < low <= high")
        for name in ("probe_period", "request_holdoff"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"network.{name}: must be positive")
        if self.request_retries < 0:
            raise ConfigError("network.request_retries: must be non-negative")
        if self.controller_delay < 0:
            raise ConfigError("network.controller_delay: must be non-negative")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    attacker_fraction: float = 0.0
    # explicit attacker ids; when empty they are placed from placement_seed,
    # or from each run's own seed when placement_seed is null.
    attackers: tuple[int, ...] = ()
    placement_seed: Optional[int] = None
    start_time: float = 8 * 3600.0
    bogus_flow_period: float = 30.0
    tamper_mode: str = "node_id"
    # repeat the same forgery for a given reporter instead of a fresh one per report
    tamper_persistent: bool = True

    def validate(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack.kind: expected one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.tamper_mode not in TAMPER_MODES:
            raise ConfigError(f"attack.tamper_mode: expected one of {TAMPER_MODES}")
        if not 0.0 <= self.attacker_fraction <= 0.5:
            raise ConfigError("attack.attacker_fraction: must lie in [0, 0.5]")
        if self.kind == "none" and (self.attacker_fraction > 0 or self.attackers):
            raise ConfigError("attack.kind: attackers configured but kind is 'none'")
        if self.kind != "none" and self.attacker_fraction == 0 and not self.attackers:
            raise ConfigError("attack.attacker_fraction: an attack needs at least one attacker")
        if self.start_time < 0:
            raise ConfigError("attack.start_time: must be non-negative")
        if self.bogus_flow_period <= 0:
            raise ConfigError("attack.bogus_flow_period: must be positive")


@dataclass(frozen=True)
class DetectorConfig:
    m: int = 200
    gamma: float = 0.0
    confidence: float = 0.95
    lrv_bandwidth: Optional[int] = None

    def params(self, horizon: int) -> DetectorParams:
        return DetectorParams(self.m, self.gamma, self.confidence, horizon, self.lrv_bandwidth)

    def validate(self, name: str) -> None:
        try:
            self.params(1)
        except ValueError as exc:
            raise ConfigError(f"detection.{name}: {exc}") from None


@dataclass(frozen=True)
class DetectionConfig:
    overhead: DetectorConfig = DetectorConfig(m=200, gamma=0.25, confidence=0.95)
    delivery: DetectorConfig = DetectorConfig(m=200, gamma=0.0, confidence=0.95)
    distributed: DetectorConfig = DetectorConfig(m=200, gamma=0.0, confidence=0.99)
    distributed_metric: str = "ctrl_rx"
    group_metric: str = "ctrl_rx"
    groups_per_side: Optional[int] = None
    exchange_depth: int = 10
    exchange_kinds: str = "all"
    exchange_scope: str = "end_to_end"
    weights: tuple[tuple[float, float], ...] = DEFAULT_WEIGHTS

    def validate(self) -> None:
        for name in ("overhead", "delivery", "distributed"):
            getattr(self, name).validate(name)
        for name in ("distributed_metric", "group_metric"):
            if getattr(self, name) not in NODE_METRICS:
                raise ConfigError(f"detection.{name}: expected one of {NODE_METRICS}")
        if self.exchange_depth < 1:
            raise ConfigError("detection.exchange_depth: must be >= 1")
        if self.exchange_kinds not in ("all", "control", "data"):
            raise ConfigError("detection.exchange_kinds: expected all, control or data")
        if self.exchange_scope not in ("end_to_end", "link"):
            raise ConfigError("detection.exchange_scope: expected end_to_end or link")
        for a, b in self.weights:
            if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
                raise ConfigError(f"detection.weights: ({a}, {b}) must be non-negative and sum to 1")


@dataclass(frozen=True)
class TrainingConfig:
    """Scenario classes simulated for the parameter sweep."""

    attack_kinds: tuple[str, ...] = ("fdff", "fni")
    attacker_fractions: tuple[float, ...] = (0.05, 0.10, 0.20)
    runs_per_class: int = 40
    train_fraction: float = 0.5
    m_set: tuple[int, ...] = (100, 150, 200)
    gamma_set: tuple[float, ...] = (0.0, 0.15, 0.25, 0.35, 0.45, 0.49)
    confidence_set: tuple[float, ...] = (0.90, 0.95, 0.99)

    def validate(self) -> None:
        for k in self.attack_kinds:
            if k not in ("fdff", "fni"):
                raise ConfigError(f"training.attack_kinds: unknown kind {k!r}")
        if self.runs_per_class < 1:
            raise ConfigError("training.runs_per_class: must be >= 1")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("training.train_fraction: must lie in (0, 1]")
        if not self.m_set or not self.gamma_set or not self.confidence_set:
            raise ConfigError("training: m_set, gamma_set and confidence_set must be non-empty")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    topology: TopologyConfig = TopologyConfig()
    traffic: TrafficConfig = TrafficConfig()
    network: NetworkConfig = NetworkConfig()
    attack: AttackConfig = AttackConfig()
    detection: DetectionConfig = DetectionConfig()
    training: TrainingConfig = TrainingConfig()
    duration: float = 36000.0
    window: float = 120.0
    seeds: tuple[int, ...] = (1,)
    critical_values: Optional[str] = None

    @property
    def n_windows(self) -> int:
        return int(self.duration // self.window)

    @property
    def attack_start_sample(self) -> int:
        """Number of clean windows before the attack (the true change point)."""
        return int(round(self.attack.start_time / self.window))

    def validate(self) -> "ScenarioConfig":
        self.topology.validate()
        self.traffic.validate()
        self.network.validate()
        self.attack.validate()
        self.detection.validate()
        self.training.validate()
        if self.window <= 0:
            raise ConfigError("window: must be positive")
        if self.duration < self.window:
            raise ConfigError("duration: shorter than one window")
        k = self.attack.start_time / self.window
        if abs(k - round(k)) > 1e-9:
            raise ConfigError("attack.start_time: must be a whole number of windows")
        if self.attack.kind != "none":
            for name in ("overhead", "delivery", "distributed"):
                if getattr(self.detection, name).m >= self.attack_start_sample:
                    raise ConfigError(f"detection.{name}.m: must be below the attack start sample")
        return self

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_attack(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, attack=dataclasses.replace(self.attack, **changes))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Content hash of every field except the seed list."""
        body = self.to_dict()
        body.pop("seeds")
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return _build(tp, value, path)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} items")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls: type, data: dict, path: str = "") -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{path}.{name}" if path else name)
    return cls(**kwargs)


def from_dict(data: Optional[dict]) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {}).validate()


def load_config(path: Path | str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)


def dump_config(config: ScenarioConfig, path: Path | str) -> None:
    def plain(obj: Any) -> Any:
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj

    Path(path).write_text(yaml.safe_dump(plain(config.to_dict()), sort_keys=False))
