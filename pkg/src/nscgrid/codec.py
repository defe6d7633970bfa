"""Event detection, capture/hold logic and spike encoding/decoding.

Detection works on the converter's own dynamics only: two input-side error
signals and one output-side signal built from the tie-line flow.  While any
of them exceeds its threshold the node is inside an event, the SNN runs and
the benchmark values track the decoded estimates; once all fall back below
threshold the benchmarks are frozen and returned until the next event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grid import ConverterParams

INPUT_VOLTAGE = "input-voltage"
INPUT_CURRENT = "input-current"
OUTPUT = "output"
EVENT_KINDS = (INPUT_VOLTAGE, INPUT_CURRENT, OUTPUT)

FEATURES = ("v", "i", "dv", "di")


class UntrainedModelError(RuntimeError):
    """Decoding was requested from a model without calibration."""


@dataclass(frozen=True)
class EventThresholds:
    sigma_v: float
    sigma_i: float
    sigma_o: float

    def __post_init__(self):
        for name in ("sigma_v", "sigma_i", "sigma_o"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


SIMULATION_THRESHOLDS = EventThresholds(0.01, 0.002, 0.0039)
RIG_THRESHOLDS = EventThresholds(0.41, 0.0063, 0.024)


def input_error_signals(params: ConverterParams, v: float, v_ref: float, i_in: float, i_in_ref: float,
                        dv_dt: float, di_dt: float) -> tuple[float, float]:
    """Return (omega_v, omega_i).

    omega_v = C dv/dt - (v_ref - v) and omega_i = L di/dt - (i_in_ref - i_in),
    with derivatives taken by backward difference at the electrical step.
    """
    i_cap = params.filter_capacitance * dv_dt
    v_ind = params.filter_inductance * di_dt
    return i_cap - (v_ref - v), v_ind - (i_in_ref - i_in)


def output_event_signal(capacitance: float, dv_dt: float, dflow_dt: float) -> float:
    return capacitance * dv_dt - dflow_dt


def detect(omega_v: float, omega_i: float, omega_o: float, thresholds: EventThresholds) -> frozenset:
    kinds = []
    if abs(omega_v) > thresholds.sigma_v:
        kinds.append(INPUT_VOLTAGE)
    if abs(omega_i) > thresholds.sigma_i:
        kinds.append(INPUT_CURRENT)
    if abs(omega_o) > thresholds.sigma_o:
        kinds.append(OUTPUT)
    return frozenset(kinds)


@dataclass
class EventRecord:
    node: int
    start: int
    end: int
    kind: str

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.end < self.start:
            raise ValueError("event end precedes start")


@dataclass
class BenchmarkHold:
    """Last estimates seen inside an event; frozen between events."""

    values: np.ndarray
    active: bool = False

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)


class EventCapture:
    """Per-node capture state machine, stepped once per control tick.

    Each kind keeps its own open/close record; the node counts as inside an
    event while any kind is open.
    """

    def __init__(self, node: int, hold: BenchmarkHold):
        self.node = node
        self.hold = hold
        self.records: list[EventRecord] = []
        self._open: dict[str, EventRecord] = {}

    @property
    def active(self) -> bool:
        return bool(self._open)

    def step(self, kinds: Iterable[str], tick: int) -> tuple[bool, bool]:
        """Update records for this tick; return (active, just_opened)."""
        kinds = set(kinds)
        was_active = self.active
        for kind in EVENT_KINDS:
            rec = self._open.get(kind)
            if kind in kinds:
                if rec is None:
                    rec = EventRecord(self.node, tick, tick, kind)
                    self._open[kind] = rec
                    self.records.append(rec)
                else:
                    rec.end = tick
            elif rec is not None:
                del self._open[kind]
        self.hold.active = self.active
        return self.active, self.active and not was_active

    def update_benchmark(self, estimates: Sequence[float]) -> None:
        if self.active:
            self.hold.values = np.array(estimates, dtype=float)


class FeatureFilter:
    """Local SNN features {v, i, dv/dt, di/dt} sampled at the control tick.

    Derivatives are backward differences over one tick passed through a
    first-order low-pass filter.
    """

    def __init__(self, dt: float, tau: float = 0.5e-3):
        if dt <= 0 or tau <= 0:
            raise ValueError("dt and tau must be positive")
        self.dt = dt
        self.alpha = 1.0 - math.exp(-dt / tau)
        self._prev: tuple[float, float] | None = None
        self._dv = 0.0
        self._di = 0.0

    def reset(self, v: float, i: float) -> None:
        self._prev = (v, i)
        self._dv = self._di = 0.0

    def step(self, v: float, i: float) -> np.ndarray:
        if self._prev is None:
            self._prev = (v, i)
        pv, pi = self._prev
        self._dv += self.alpha * ((v - pv) / self.dt - self._dv)
        self._di += self.alpha * ((i - pi) / self.dt - self._di)
        self._prev = (v, i)
        return np.array([v, i, self._dv, self._di])


@dataclass
class EncoderConfig:
    ranges: np.ndarray
    neurons_per_feature: int = 64
    tuning_width: float = 4.0 / 63.0
    spike_tick: float = 1e-3

    def __post_init__(self):
        self.ranges = np.array(self.ranges, dtype=float).reshape(-1, 2)
        if self.neurons_per_feature < 2:
            raise ValueError("need at least two neurons per feature")
        if np.any(self.ranges[:, 1] <= self.ranges[:, 0]):
            raise ValueError("feature ranges must be non-degenerate")
        if not self.tuning_width > 0:
            raise ValueError("tuning width must be positive")

    @property
    def n_features(self) -> int:
        return self.ranges.shape[0]

    @property
    def width(self) -> int:
        return self.n_features * self.neurons_per_feature

    @classmethod
    def fit(cls, features: np.ndarray, margin: float = 0.1, quantile: float = 0.0, **kw) -> "EncoderConfig":
        """Ranges spanning the observed features, widened by ``margin`` on each side.

        With ``quantile`` > 0 the span runs between that quantile and its
        complement, so a few transient outliers saturate the edge neurons
        instead of compressing the useful range.
        """
        features = np.atleast_2d(features)
        if not 0.0 <= quantile < 0.5:
            raise ValueError("quantile must lie in [0, 0.5)")
        lo = np.quantile(features, quantile, axis=0)
        hi = np.quantile(features, 1.0 - quantile, axis=0)
        span = np.maximum(hi - lo, 1e-6 * np.maximum(1.0, np.abs(hi)))
        return cls(np.stack([lo - margin * span, hi + margin * span], axis=1), **kw)

    def to_dict(self) -> dict:
        return {"ranges": self.ranges.tolist(), "neurons_per_feature": self.neurons_per_feature,
                "tuning_width": self.tuning_width, "spike_tick": self.spike_tick}

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(np.array(d["ranges"]), int(d["neurons_per_feature"]), float(d["tuning_width"]),
                   float(d["spike_tick"]))


def tuning_activation(features: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Triangular tuning activation, shape (..., n_features, neurons_per_feature)."""
    features = np.asarray(features, dtype=float)
    lo, hi = config.ranges[:, 0], config.ranges[:, 1]
    x = (np.clip(features, lo, hi) - lo) / (hi - lo)
    centers = np.linspace(0.0, 1.0, config.neurons_per_feature)
    dist = np.abs(x[..., :, None] - centers)
    return np.maximum(0.0, 1.0 - dist / config.tuning_width)


def encode(features: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Spike vector(s) for one or more feature rows; output width = config.width."""
    act = tuning_activation(features, config)
    spikes = (act > 0.5).astype(np.uint8)
    return spikes.reshape(*spikes.shape[:-2], config.width)


@dataclass
class Decoder:
    """Exponentially filtered output rate mapped affinely to physical estimates.

    On reset the decoder may be seeded with a starting estimate (the held
    benchmark at event open).  The seed decays with the same filter constant
    while the spike rate builds up, so the output starts from the held value
    instead of from the bare offset.
    """

    n_outputs: int
    tau: float = 0.02
    dt: float = 1e-3
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None
    rate: np.ndarray = field(init=False)
    carry: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.tau <= 0 or self.dt <= 0:
            raise ValueError("tau and dt must be positive")
        self.reset()

    @property
    def decay(self) -> float:
        return math.exp(-self.dt / self.tau)

    @property
    def calibrated(self) -> bool:
        return self.scale is not None and self.offset is not None

    def reset(self, start: Sequence[float] | None = None) -> None:
        self.rate = np.zeros(self.n_outputs)
        self.carry = np.zeros(self.n_outputs)
        if start is not None:
            if not self.calibrated:
                raise UntrainedModelError("model has no decode calibration")
            self.carry = np.asarray(start, dtype=float) - self.offset

    def step(self, spikes: np.ndarray) -> np.ndarray:
        a = self.decay
        self.rate = a * self.rate + (1.0 - a) * np.asarray(spikes, dtype=float)
        self.carry = a * self.carry
        return self.rate

    def value(self) -> np.ndarray:
        if not self.calibrated:
            raise UntrainedModelError("model has no decode calibration")
        return self.scale * self.rate + self.offset + self.carry


def decode(spikes: np.ndarray | None, hold: BenchmarkHold, decoder: Decoder) -> np.ndarray:
    """Estimate for this tick: decoded rate inside events, held benchmark otherwise."""
    if not hold.active:
        if not decoder.calibrated:
            raise UntrainedModelError("model has no decode calibration")
        return hold.values.copy()
    decoder.step(spikes if spikes is not None else np.zeros(decoder.n_outputs))
    return decoder.value()


def raster_rows(raster: np.ndarray, tick0: int = 0) -> list[tuple[int, int]]:
    """(tick, neuron) pairs of every spike in a (ticks, width) raster."""
    ticks, neurons = np.nonzero(np.asarray(raster))
    return [(int(t) + tick0, int(n)) for t, n in zip(ticks, neurons)]
