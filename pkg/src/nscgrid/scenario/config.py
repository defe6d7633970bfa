"""Scenario configuration: a versioned JSON document with a strict schema.

Unknown keys anywhere in the document are rejected.  Values that did not
come from the tabulated case data are listed under ``assumed`` so a reader
can tell measured parameters from tuning choices.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..codec import EventThresholds
from ..control import OBJECTIVES, SecondaryGains
from ..grid import (BatteryParams, ConfigurationError, ConverterParams, LineParams, LoadModel, NetworkGraph,
                    NodeSpec, build_network)
from ..snn import NeuronConfig, StdpConfig

SCHEMA_VERSION = 1
MODES = ("clc", "nsc")
ACTIONS = ("load-step", "line-outage", "line-restore", "node-disconnect", "pv-power-step")
BATTERY_MODES = ("charging", "discharging")


def _strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    return data


@dataclass
class LoadConfig:
    kind: str
    value: float  # ohms for resistive loads, watts for constant-power loads


@dataclass
class NodeConfig:
    id: int
    converter: dict | None = None
    capacitance: float | None = None
    load: LoadConfig | None = None
    battery: dict | None = None
    pv_power: float = 0.0


@dataclass
class LineConfig:
    resistance: float
    inductance: float
    endpoints: list[int]


@dataclass
class Action:
    time: float
    action: str
    node: int | None = None
    line: int | None = None
    value: float | None = None


@dataclass
class SweepItem:
    node: int
    before: float
    after: float


@dataclass
class SnnConfig:
    hidden: list[int] = field(default_factory=lambda: [256, 256])
    neuron: dict = field(default_factory=dict)
    decode_tau: float = 0.02
    tuning_width: float = 1.0  # half the block fires: a two-sided thermometer code
    readout_ridge: float = 100.0
    stdp: bool = False
    stdp_config: dict = field(default_factory=dict)
    epochs: int = 200
    lr: float = 1e-2


@dataclass
class ScenarioConfig:
    name: str
    nodes: list[NodeConfig]
    lines: list[LineConfig]
    timeline: list[Action]
    mode: str = "clc"
    objective: str = "current"
    battery_mode: str = "discharging"
    thresholds: dict = field(default_factory=lambda: {"sigma_v": 0.01, "sigma_i": 0.002, "sigma_o": 0.0039})
    gains: dict = field(default_factory=dict)
    snn: SnnConfig = field(default_factory=SnnConfig)
    model: str | None = None
    seed: int = 0
    dt_electrical: float = 1e-5
    dt_control: float = 1e-3
    duration: float = 2.5
    warmup: float = 1.0
    sweep: list[SweepItem] = field(default_factory=list)
    sweep_ticks: int = 100
    assumed: list[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------
    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"schema version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}")
        if self.battery_mode not in BATTERY_MODES:
            raise ConfigurationError(f"battery_mode must be one of {BATTERY_MODES}")
        conv = [n for n in self.nodes if n.converter is not None]
        if not conv:
            raise ConfigurationError("scenario has no converters")
        if self.objective == "soc":
            if any(n.battery is None for n in conv):
                raise ConfigurationError("soc objective requires a battery at every converter")
            if self.mode == "nsc":
                raise ConfigurationError("soc objective is only supported in clc mode")
        if not (0 < self.dt_electrical < self.dt_control):
            raise ConfigurationError("need 0 < dt_electrical < dt_control")
        ratio = self.dt_control / self.dt_electrical
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigurationError("dt_control must be an integer multiple of dt_electrical")
        if self.duration <= 0 or self.warmup < 0:
            raise ConfigurationError("duration must be positive and warmup non-negative")
        times = [a.time for a in self.timeline]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("stage times must be strictly increasing")
        if any(not 0 <= t < self.duration for t in times):
            raise ConfigurationError("stage times must lie within the run duration")
        ids = {n.id for n in self.nodes}
        for a in self.timeline:
            self._check_action(a, ids)
        for s in self.sweep:
            if s.node not in ids or self._node(s.node).load is None:
                raise ConfigurationError(f"sweep references node {s.node} without a load")
        if self.sweep_ticks < 1:
            raise ConfigurationError("sweep_ticks must be positive")
        EventThresholds(**self.thresholds)
        SecondaryGains(**self.gains)
        NeuronConfig(**self.snn.neuron)
        StdpConfig(**self.snn.stdp_config)
        self.graph()

    def _node(self, k: int) -> NodeConfig:
        return next(n for n in self.nodes if n.id == k)

    def _check_action(self, a: Action, ids: set) -> None:
        if a.action not in ACTIONS:
            raise ConfigurationError(f"unknown action {a.action!r}")
        if a.action in ("line-outage", "line-restore"):
            if a.line is None or not 0 <= a.line < len(self.lines):
                raise ConfigurationError(f"{a.action} at t={a.time} references unknown line {a.line}")
        elif a.node is None or a.node not in ids:
            raise ConfigurationError(f"{a.action} at t={a.time} references unknown node {a.node}")
        if a.action == "load-step":
            if self._node(a.node).load is None:
                raise ConfigurationError(f"load-step at node {a.node}, which has no load")
            if a.value is None or a.value <= 0:
                raise ConfigurationError("load-step needs a positive value")
        if a.action == "pv-power-step" and (a.value is None or a.value < 0):
            raise ConfigurationError("pv-power-step needs a non-negative value")

    # -- runtime objects ----------------------------------------------------
    @property
    def converter_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.converter is not None]

    def graph(self) -> NetworkGraph:
        specs = []
        for n in sorted(self.nodes, key=lambda n: n.id):
            conv = ConverterParams(**n.converter) if n.converter is not None else None
            load = LoadModel(n.load.kind, ((0.0, n.load.value),)) if n.load is not None else None
            bat = BatteryParams(**n.battery) if n.battery is not None else None
            pv = ((0.0, n.pv_power),) if n.pv_power else ()
            specs.append(NodeSpec(n.id, conv, n.capacitance, load, bat, pv))
        lines = [LineParams(l.resistance, l.inductance, tuple(l.endpoints)) for l in self.lines]
        return build_network(specs, lines)

    @property
    def event_thresholds(self) -> EventThresholds:
        return EventThresholds(**self.thresholds)

    @property
    def secondary_gains(self) -> SecondaryGains:
        return SecondaryGains(**self.gains)

    @property
    def neuron(self) -> NeuronConfig:
        return NeuronConfig(**{"dt": self.dt_control, **self.snn.neuron})

    @property
    def stdp(self) -> StdpConfig:
        return StdpConfig(**self.snn.stdp_config)

    def with_changes(self, **kw) -> "ScenarioConfig":
        d = self.to_dict()
        d.update(kw)
        return ScenarioConfig.from_dict(d)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        d = dict(_strict(cls, data, "scenario"))
        for key in ("name", "nodes", "lines", "timeline"):
            if key not in d:
                raise ConfigurationError(f"scenario: missing required key {key!r}")

        def node(i, x):
            x = dict(_strict(NodeConfig, x, f"nodes[{i}]"))
            if x.get("converter") is not None:
                _keys(x["converter"], ConverterParams, f"nodes[{i}].converter")
            if x.get("battery") is not None:
                _keys(x["battery"], BatteryParams, f"nodes[{i}].battery")
            if x.get("load") is not None:
                x["load"] = LoadConfig(**_strict(LoadConfig, x["load"], f"nodes[{i}].load"))
            return NodeConfig(**x)

        d["nodes"] = [node(i, x) for i, x in enumerate(d["nodes"])]
        d["lines"] = [LineConfig(**_strict(LineConfig, x, f"lines[{i}]")) for i, x in enumerate(d["lines"])]
        d["timeline"] = [Action(**_strict(Action, x, f"timeline[{i}]")) for i, x in enumerate(d["timeline"])]
        d["sweep"] = [SweepItem(**_strict(SweepItem, x, f"sweep[{i}]")) for i, x in enumerate(d.get("sweep", []))]
        if "snn" in d:
            d["snn"] = SnnConfig(**_strict(SnnConfig, d["snn"], "snn"))
            _keys(d["snn"].neuron, NeuronConfig, "snn.neuron")
            _keys(d["snn"].stdp_config, StdpConfig, "snn.stdp_config")
        if "thresholds" in d:
            _keys(d["thresholds"], EventThresholds, "thresholds")
        if "gains" in d:
            _keys(d["gains"], SecondaryGains, "gains")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"scenario: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n")


def _keys(d: Any, cls, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where}: expected an object")
    unknown = sorted(set(d) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
