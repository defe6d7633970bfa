"""Primary droop and distributed secondary control.

The secondary layer is identical in CLC and NSC modes; the only difference
is where neighbour values come from (see :func:`nsc_bind_estimates`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .grid import BatteryParams

log = logging.getLogger(__name__)

OBJECTIVES = ("current", "power", "soc")
SOC_EPS = 1e-3


class EstimatorFault(RuntimeError):
    """A neighbour value required by the secondary layer is missing."""


@dataclass(frozen=True)
class DroopParams:
    droop_gain: float
    nominal_voltage: float
    max_deviation: float
    max_current: float

    def __post_init__(self):
        if self.droop_gain <= 0:
            raise ValueError("droop gain must be positive")
        if not math.isclose(self.droop_gain, self.max_deviation / self.max_current, rel_tol=1e-9):
            raise ValueError("droop gain must equal max_deviation / max_current")

    @classmethod
    def from_rating(cls, nominal_voltage: float, rated_power: float, deviation: float = 0.05) -> "DroopParams":
        dv = deviation * nominal_voltage
        imax = rated_power / nominal_voltage
        return cls(dv / imax, nominal_voltage, dv, imax)


def droop_reference(i_k: float, params: DroopParams) -> float:
    return params.nominal_voltage - params.droop_gain * i_k


@dataclass(frozen=True)
class PiState:
    kp: float
    ki: float
    integral: float = 0.0
    limit: float | None = None


def pi_step(error: float, state: PiState, dt: float) -> tuple[float, PiState]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    integral = state.integral + state.ki * error * dt
    if state.limit is not None:
        integral = min(max(integral, -state.limit), state.limit)
    return state.kp * error + integral, replace(state, integral=integral)


@dataclass(frozen=True)
class ObserverState:
    v_bar: float
    integral: float = 0.0


def observer_step(v_k: float, neighbor_v_bars: Mapping[int, float], adjacency_row: Mapping[int, float],
                  state: ObserverState, dt: float) -> ObserverState:
    """Advance the dynamic-consensus average-voltage observer by one step."""
    drive = 0.0
    for j, a in adjacency_row.items():
        if a == 0:
            continue
        if j not in neighbor_v_bars or neighbor_v_bars[j] is None:
            raise EstimatorFault(f"missing averaged voltage from neighbour {j}")
        drive += a * (neighbor_v_bars[j] - state.v_bar)
    integral = state.integral + drive * dt
    return ObserverState(v_k + integral, integral)


def sharing_mismatch(own: float, neighbor_values: Mapping[int, float], weights: Mapping[int, float]) -> float:
    return sum(weights.get(j, 1.0) * (x - own) for j, x in neighbor_values.items())


def compose_setpoint(v_ref: float, dv_voltage: float, dv_share: float, nominal_voltage: float):
    """Return (v*, saturated) with v* clamped to [0.8, 1.2] x nominal."""
    raw = v_ref + dv_voltage + dv_share
    lo, hi = 0.8 * nominal_voltage, 1.2 * nominal_voltage
    v = min(max(raw, lo), hi)
    return v, v != raw


def soc_headroom(soc: float, mode: str, params: BatteryParams) -> float:
    if mode == "charging":
        return params.soc_max - soc
    if mode == "discharging":
        return soc - params.soc_min
    raise ValueError(f"unknown battery mode {mode!r}")


def soc_share_reference(powers: Mapping[int, float], socs: Mapping[int, float], mode: str,
                        params: Mapping[int, BatteryParams], neighbors: Mapping[int, frozenset]):
    """Mismatch of the P/dSOC ratio per node; nodes with dSOC below eps are excluded."""
    gamma = {}
    for k, p in powers.items():
        d = soc_headroom(socs[k], mode, params[k])
        if d <= SOC_EPS:
            log.warning("node %d excluded from SOC sharing: headroom %.4g", k, d)
            continue
        gamma[k] = p / d
    mismatch = {}
    for k in gamma:
        nb = {j: gamma[j] for j in neighbors.get(k, ()) if j in gamma}
        mismatch[k] = sharing_mismatch(gamma[k], nb, {})
    return mismatch, gamma


@dataclass(frozen=True)
class NeighborValues:
    """Snapshot of what node k knows about its neighbours in one control tick."""

    v_bar: Mapping[int, float]
    current: Mapping[int, float]
    power: Mapping[int, float]
    weights: Mapping[int, float]
    gamma: Mapping[int, float | None] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not any(a != 0 for a in self.weights.values())


@dataclass(frozen=True)
class RemoteEstimate:
    """Estimated averaged voltage and current of one remote node.

    ``p`` overrides the derived power i * v when the true power is known.
    """

    v: float
    i: float
    p: float | None = None

    @property
    def power(self) -> float:
        return self.i * self.v if self.p is None else self.p


def nsc_bind_estimates(estimates: Mapping[int, RemoteEstimate], flow_neighbors: frozenset,
                       gamma: Mapping[int, float | None] | None = None) -> NeighborValues:
    """Neighbour values drawn from local estimates over the flow adjacency (unit weights)."""
    missing = [j for j in flow_neighbors if j not in estimates]
    if missing:
        raise EstimatorFault(f"no estimate for flow neighbours {sorted(missing)}")
    js = sorted(flow_neighbors)
    return NeighborValues(
        v_bar={j: estimates[j].v for j in js},
        current={j: estimates[j].i for j in js},
        power={j: estimates[j].power for j in js},
        weights={j: 1.0 for j in js},
        gamma={j: (gamma or {}).get(j) for j in js},
    )


@dataclass(frozen=True)
class SecondaryGains:
    kp_voltage: float = 0.5
    ki_voltage: float = 20.0
    kp_share: float = 0.2
    ki_share: float = 10.0
    observer_gain: float = 1.0


class SecondaryController:
    """Per-node observer + voltage PI + sharing PI, ticked at the control rate."""

    def __init__(self, node: int, droop: DroopParams, objective: str, gains: SecondaryGains,
                 share_base: float, v_init: float | None = None):
        if objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {objective!r}")
        vn = droop.nominal_voltage
        limit = 0.2 * vn
        self.node = node
        self.droop = droop
        self.objective = objective
        self.share_base = share_base
        self.observer_gain = gains.observer_gain
        self.observer = ObserverState(vn if v_init is None else v_init)
        self.pi_voltage = PiState(gains.kp_voltage, gains.ki_voltage, 0.0, limit)
        self.pi_share = PiState(gains.kp_share, gains.ki_share, 0.0, limit)
        self.dv_voltage = 0.0
        self.dv_share = 0.0
        self.frozen = False
        self.saturated = False

    def own_share_value(self, i_k: float, p_k: float, gamma_k: float | None) -> float | None:
        if self.objective == "current":
            return i_k
        if self.objective == "power":
            return p_k
        return gamma_k

    def step(self, v_k: float, i_k: float, p_k: float, nb: NeighborValues, dt: float,
             gamma_k: float | None = None) -> float:
        vn = self.droop.nominal_voltage
        v_ref = droop_reference(i_k, self.droop)
        self.frozen = nb.empty
        if not self.frozen:
            weights = {j: self.observer_gain * a for j, a in nb.weights.items()}
            self.observer = observer_step(v_k, nb.v_bar, weights, self.observer, dt)
            self.dv_voltage, self.pi_voltage = pi_step(vn - self.observer.v_bar, self.pi_voltage, dt)
            own = self.own_share_value(i_k, p_k, gamma_k)
            if self.objective == "current":
                values = nb.current
            elif self.objective == "power":
                values = nb.power
            else:
                values = {j: g for j, g in nb.gamma.items() if g is not None}
            if own is None:
                lam = 0.0
            else:
                lam = sharing_mismatch(own, values, nb.weights)
            self.dv_share, self.pi_share = pi_step(lam / self.share_base, self.pi_share, dt)
        v_star, self.saturated = compose_setpoint(v_ref, self.dv_voltage, self.dv_share, vn)
        if self.saturated:
            log.debug("setpoint saturated at node %d", self.node)
        return v_star
