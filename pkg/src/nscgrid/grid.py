"""Fixed-step averaged electrical model of a DC microgrid.

State layout of the packed vector used by :class:`ElectricalSystem`::

    [ v (every bus) | i (converter output current) | xi (voltage-loop integral) | i_line (inductive lines) ]

Each converter is an averaged source: an inner voltage loop (PI on the bus
voltage error) commands a current reference that the output current follows
through a first-order lag.  The closed loop makes the bus voltage track its
setpoint with the configured tracking time constant.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

SOURCE_KINDS = ("stiff-source", "battery", "pv-mppt")
LOAD_KINDS = ("resistive", "constant-power")


class ConfigurationError(ValueError):
    """Raised when a topology or parameter set is rejected before simulation."""


class NonFiniteStateError(FloatingPointError):
    def __init__(self, node: int, tick: int):
        super().__init__(f"non-finite electrical state at node {node}, tick {tick}")
        self.node = node
        self.tick = tick


@dataclass(frozen=True)
class ConverterParams:
    rated_voltage: float
    rated_power: float
    filter_inductance: float
    filter_capacitance: float
    amplification_ratio: float = 1.0
    source_kind: str = "stiff-source"
    tracking_time_constant: float = 1e-3

    def __post_init__(self):
        if self.filter_inductance <= 0 or self.filter_capacitance <= 0:
            raise ConfigurationError("filter L and C must be positive")
        if self.amplification_ratio <= 0:
            raise ConfigurationError("amplification ratio must be positive")
        if self.tracking_time_constant <= 0:
            raise ConfigurationError("tracking time constant must be positive")
        if self.source_kind not in SOURCE_KINDS:
            raise ConfigurationError(f"unknown source kind {self.source_kind!r}")

    @property
    def rated_current(self) -> float:
        return self.rated_power / self.rated_voltage

    @property
    def current_time_constant(self) -> float:
        return self.tracking_time_constant / 10.0

    @property
    def loop_gains(self) -> tuple[float, float]:
        # critically damped double pole at 1/tau for the capacitor plant
        tau = self.tracking_time_constant
        c = self.filter_capacitance
        return 2.0 * c / tau, c / tau**2


@dataclass
class ConverterState:
    v: float
    i: float = 0.0
    v_in: float = 0.0
    i_in: float = 0.0
    soc: float | None = None
    loop_integral: float = 0.0


@dataclass(frozen=True)
class LineParams:
    resistance: float
    inductance: float
    endpoints: tuple[int, int]

    def __post_init__(self):
        if self.resistance <= 0:
            raise ConfigurationError("line resistance must be positive")
        if self.inductance < 0:
            raise ConfigurationError("line inductance must be non-negative")
        if self.endpoints[0] == self.endpoints[1]:
            raise ConfigurationError(f"self-loop line at node {self.endpoints[0]}")


@dataclass(frozen=True)
class LoadModel:
    """Piecewise-constant load; ``schedule`` is ((t0, value0), (t1, value1), ...)."""

    kind: str
    schedule: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ConfigurationError(f"unknown load kind {self.kind!r}")
        times = [t for t, _ in self.schedule]
        if not self.schedule:
            raise ConfigurationError("empty load schedule")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("load schedule times must be strictly increasing")
        if any(val <= 0 for _, val in self.schedule):
            raise ConfigurationError("load values must be positive")

    def value_at(self, t: float) -> float:
        val = self.schedule[0][1]
        for t0, v0 in self.schedule:
            if t >= t0:
                val = v0
        return val

    def with_step(self, t: float, value: float) -> "LoadModel":
        kept = tuple(p for p in self.schedule if p[0] < t)
        return replace(self, schedule=kept + ((t, value),))


@dataclass(frozen=True)
class BatteryParams:
    capacity: float  # ampere-seconds
    soc_initial: float
    soc_max: float = 0.9
    soc_min: float = 0.2
    voltage: float = 96.0

    def __post_init__(self):
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ConfigurationError("need 0 <= SOC_min < SOC_max <= 1")
        if self.capacity <= 0:
            raise ConfigurationError("battery capacity must be positive")


@dataclass(frozen=True)
class NodeSpec:
    id: int
    converter: ConverterParams | None = None
    capacitance: float | None = None  # passive buses only
    load: LoadModel | None = None
    battery: BatteryParams | None = None
    pv_schedule: tuple[tuple[float, float], ...] = ()

    @property
    def bus_capacitance(self) -> float:
        if self.converter is not None:
            return self.converter.filter_capacitance
        if self.capacitance is None or self.capacitance <= 0:
            raise ConfigurationError(f"passive node {self.id} needs a positive capacitance")
        return self.capacitance

    def pv_power_at(self, t: float) -> float:
        p = 0.0
        for t0, v0 in self.pv_schedule:
            if t >= t0:
                p = v0
        return p


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[NodeSpec, ...]
    lines: tuple[LineParams, ...]
    incidence: np.ndarray = field(repr=False)
    flow_adjacency: tuple[frozenset, ...] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def converter_nodes(self) -> tuple[int, ...]:
        return tuple(k for k, n in enumerate(self.nodes) if n.converter is not None)

    def line_between(self, a: int, b: int) -> int:
        for idx, ln in enumerate(self.lines):
            if set(ln.endpoints) == {a, b}:
                return idx
        raise KeyError(f"no line between {a} and {b}")


def _adjacency(n: int, lines: Sequence[LineParams], active: Sequence[bool]) -> np.ndarray:
    J = np.zeros((n, n), dtype=np.int8)
    for ln, on in zip(lines, active):
        if on:
            a, b = ln.endpoints
            J[a, b] = J[b, a] = 1
    return J


def build_network(nodes: Sequence[NodeSpec], lines: Sequence[LineParams]) -> NetworkGraph:
    ids = [nd.id for nd in nodes]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate node id")
    if sorted(ids) != list(range(len(ids))):
        raise ConfigurationError("node ids must be 0..N-1")
    nodes = tuple(sorted(nodes, key=lambda nd: nd.id))
    for ln in lines:
        for e in ln.endpoints:
            if e not in ids:
                raise ConfigurationError(f"dangling line endpoint {e}")
    J = _adjacency(len(nodes), lines, [True] * len(lines))
    J.setflags(write=False)
    nflow = tuple(frozenset(np.flatnonzero(J[k]).tolist()) for k in range(len(nodes)))
    for nd in nodes:
        nd.bus_capacitance  # validates passive capacitance
    return NetworkGraph(tuple(nodes), tuple(lines), J, nflow)


def converter_neighbors(graph: NetworkGraph, active: Sequence[bool] | None = None) -> dict[int, frozenset]:
    """Converters reachable from each converter through passive buses only.

    Equals ``N_flow`` restricted to converters when every bus hosts a converter.
    """
    if active is None:
        active = [True] * len(graph.lines)
    J = _adjacency(graph.n_nodes, graph.lines, active)
    is_conv = [nd.converter is not None for nd in graph.nodes]
    out = {}
    for k in graph.converter_nodes:
        seen = {k}
        found = set()
        queue = deque([k])
        while queue:
            u = queue.popleft()
            for w in np.flatnonzero(J[u]):
                w = int(w)
                if w in seen:
                    continue
                seen.add(w)
                if is_conv[w]:
                    found.add(w)
                else:
                    queue.append(w)
        out[k] = frozenset(found)
    return out


def stability_bound(lines: Sequence[LineParams]) -> float:
    """Largest admissible step: dt < L/(2R) over inductive lines."""
    bounds = [ln.inductance / (2 * ln.resistance) for ln in lines if ln.inductance > 0]
    return min(bounds) if bounds else np.inf


def check_time_step(graph: NetworkGraph, dt: float) -> None:
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    bound = stability_bound(graph.lines)
    if not dt < bound:
        raise ConfigurationError(f"dt={dt:g}s violates line stability bound {bound:g}s")
    for nd in graph.nodes:
        if nd.converter is not None and dt >= nd.converter.current_time_constant:
            raise ConfigurationError(f"dt={dt:g}s too coarse for converter at node {nd.id}")


def tie_line_flows(graph: NetworkGraph, line_currents: Sequence[float]) -> np.ndarray:
    """Net current exported by every node into its tie lines.

    A line current is positive when flowing from ``endpoints[0]`` to ``endpoints[1]``.
    """
    if len(line_currents) != len(graph.lines):
        raise ValueError("need one current per line")
    net = np.zeros(graph.n_nodes)
    for ln, cur in zip(graph.lines, line_currents):
        a, b = ln.endpoints
        net[a] += cur
        net[b] -= cur
    return net


def update_soc(soc: float, i_bat: float, dt: float, params: BatteryParams) -> tuple[float, bool]:
    """Coulomb counting with clamping; returns (soc', clamped)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    new = soc - i_bat * dt / params.capacity
    clamped = min(max(new, params.soc_min), params.soc_max)
    return clamped, clamped != new


@dataclass
class Injections:
    """Per-tick exogenous terms: resistive conductance and constant current per node."""

    conductance: np.ndarray
    current: np.ndarray


def load_injections(graph: NetworkGraph, t: float, v: np.ndarray, load_values=None, pv_values=None) -> Injections:
    """Evaluate loads at time ``t``; constant-power loads and PV become P/v currents.

    ``load_values`` and ``pv_values`` override the schedules when given.
    """
    n = graph.n_nodes
    g = np.zeros(n)
    cur = np.zeros(n)
    for k, nd in enumerate(graph.nodes):
        vn = nd.converter.rated_voltage if nd.converter else None
        v_floor = 0.1 * (vn if vn else max(abs(v[k]), 1.0))
        v_eff = max(v[k], v_floor)
        if nd.load is not None:
            val = load_values[k] if load_values is not None else nd.load.value_at(t)
            if nd.load.kind == "resistive":
                g[k] = 1.0 / val
            else:
                cur[k] -= val / v_eff
        if pv_values is not None:
            cur[k] += pv_values[k] / v_eff
        elif nd.pv_schedule:
            cur[k] += nd.pv_power_at(t) / v_eff
    return Injections(g, cur)


class ElectricalSystem:
    """Packed linear-affine form ``dx/dt = A x + b`` of the whole network.

    ``A`` depends only on topology (lines in service, resistive loads) and is
    cached; ``b`` carries setpoints and constant-current injections.  With
    ``droop`` gains the converters track ``setpoint - m * i`` continuously,
    i.e. the primary droop acts as a virtual resistance in the inner loop.
    """

    def __init__(self, graph: NetworkGraph, dt: float, droop: Sequence[float] | None = None):
        check_time_step(graph, dt)
        self.graph = graph
        self.dt = dt
        self.conv = graph.converter_nodes
        self.droop = np.zeros(len(self.conv)) if droop is None else np.asarray(droop, dtype=float)
        if self.droop.shape != (len(self.conv),) or np.any(self.droop < 0):
            raise ConfigurationError("need one non-negative droop gain per converter")
        self.n = graph.n_nodes
        self.nc = len(self.conv)
        self.ind_lines = [i for i, ln in enumerate(graph.lines) if ln.inductance > 0]
        self.res_lines = [i for i, ln in enumerate(graph.lines) if ln.inductance == 0]
        self.size = self.n + 2 * self.nc + len(self.ind_lines)
        self.cap = np.array([nd.bus_capacitance for nd in graph.nodes])
        self._cache: dict = {}

    # slices into the packed vector
    @property
    def sv(self):
        return slice(0, self.n)

    @property
    def si(self):
        return slice(self.n, self.n + self.nc)

    @property
    def sxi(self):
        return slice(self.n + self.nc, self.n + 2 * self.nc)

    @property
    def sl(self):
        return slice(self.n + 2 * self.nc, self.size)

    def pack(self, v, i, xi, i_line) -> np.ndarray:
        x = np.zeros(self.size)
        x[self.sv] = v
        x[self.si] = i
        x[self.sxi] = xi
        x[self.sl] = np.asarray(i_line, dtype=float)[self.ind_lines] if len(self.ind_lines) else []
        return x

    def line_currents(self, x: np.ndarray, active: Sequence[bool]) -> np.ndarray:
        out = np.zeros(len(self.graph.lines))
        out[self.ind_lines] = x[self.sl]
        v = x[self.sv]
        for li in self.res_lines:
            ln = self.graph.lines[li]
            a, b = ln.endpoints
            out[li] = (v[a] - v[b]) / ln.resistance
        out[~np.asarray(active, dtype=bool)] = 0.0
        return out

    def system_matrix(self, active: Sequence[bool], conductance: np.ndarray) -> np.ndarray:
        n, sv, si, sxi, sl = self.n, self.sv, self.si, self.sxi, self.sl
        A = np.zeros((self.size, self.size))
        C = self.cap
        vi, ii, xii = np.arange(n), np.arange(self.nc) + si.start, np.arange(self.nc) + sxi.start
        A[vi, vi] -= conductance / C
        for c, k in enumerate(self.conv):
            p = self.graph.nodes[k].converter
            kp, ki = p.loop_gains
            tau_i = p.current_time_constant
            A[k, ii[c]] += 1.0 / C[k]
            m = self.droop[c]
            # i' = (kp (s - m i - v) + xi - i) / tau_i ; xi' = ki (s - m i - v)
            A[ii[c], k] = -kp / tau_i
            A[ii[c], xii[c]] = 1.0 / tau_i
            A[ii[c], ii[c]] = -(1.0 + kp * m) / tau_i
            A[xii[c], k] = -ki
            A[xii[c], ii[c]] = -ki * m
        for pos, li in enumerate(self.ind_lines):
            if not active[li]:
                continue
            ln = self.graph.lines[li]
            a, b = ln.endpoints
            row = sl.start + pos
            A[row, a] += 1.0 / ln.inductance
            A[row, b] -= 1.0 / ln.inductance
            A[row, row] -= ln.resistance / ln.inductance
            A[a, row] -= 1.0 / C[a]
            A[b, row] += 1.0 / C[b]
        for li in self.res_lines:
            if not active[li]:
                continue
            ln = self.graph.lines[li]
            a, b = ln.endpoints
            g = 1.0 / ln.resistance
            A[a, a] -= g / C[a]
            A[a, b] += g / C[a]
            A[b, b] -= g / C[b]
            A[b, a] += g / C[b]
        return A

    def forcing(self, setpoints: np.ndarray, current: np.ndarray) -> np.ndarray:
        b = np.zeros(self.size)
        b[self.sv] = current / self.cap
        for c, k in enumerate(self.conv):
            p = self.graph.nodes[k].converter
            kp, ki = p.loop_gains
            b[self.si.start + c] = kp * setpoints[c] / p.current_time_constant
            b[self.sxi.start + c] = ki * setpoints[c]
        return b

    def derivative(self, x, active, inj: Injections, setpoints) -> np.ndarray:
        return self.system_matrix(active, inj.conductance) @ x + self.forcing(setpoints, inj.current)

    def propagators(self, active, conductance, nsteps: int):
        """Return (Phi, Phi^(n-1), S_(n-1)) for ``nsteps`` forward-Euler steps."""
        key = (tuple(bool(a) for a in active), conductance.tobytes(), nsteps)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        phi = np.eye(self.size) + self.dt * self.system_matrix(active, conductance)
        radius = float(np.max(np.abs(np.linalg.eigvals(phi))))
        # out-of-service lines leave exact unit eigenvalues behind
        if radius > 1.0 + 1e-12:
            raise ConfigurationError(f"dt={self.dt:g}s is unstable for this network (spectral radius {radius:.6f})")
        power = np.eye(self.size)
        acc = np.zeros((self.size, self.size))
        for _ in range(nsteps - 1):
            acc = acc + power
            power = phi @ power
        out = (phi, power, acc)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def advance(self, x, active, inj: Injections, setpoints, nsteps: int):
        """Apply ``nsteps`` Euler steps; returns (x_n, x_{n-1})."""
        phi, power, acc = self.propagators(active, inj.conductance, nsteps)
        off = [self.sl.start + pos for pos, li in enumerate(self.ind_lines) if not active[li]]
        if off:
            x = np.array(x, dtype=float)
            x[off] = 0.0
        u = self.dt * self.forcing(setpoints, inj.current)
        x_prev = power @ x + acc @ u
        return phi @ x_prev + u, x_prev

    def input_side(self, x: np.ndarray, setpoints: np.ndarray):
        """Averaged input-side quantities per converter: (v_in, i_in, i_in_ref)."""
        v = x[self.sv]
        i = x[self.si]
        xi = x[self.sxi]
        v_in = np.zeros(self.nc)
        i_in = np.zeros(self.nc)
        i_in_ref = np.zeros(self.nc)
        for c, k in enumerate(self.conv):
            p = self.graph.nodes[k].converter
            kp, _ = p.loop_gains
            d = p.amplification_ratio
            v_in[c] = v[k] / d
            i_in[c] = i[c] / d
            i_in_ref[c] = (kp * (setpoints[c] - self.droop[c] * i[c] - v[k]) + xi[c]) / d
        return v_in, i_in, i_in_ref

    def check_finite(self, x: np.ndarray, tick: int) -> None:
        if np.all(np.isfinite(x)):
            return
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        if bad < self.n:
            node = bad
        elif bad < self.n + 2 * self.nc:
            node = self.conv[(bad - self.n) % self.nc]
        else:
            node = self.graph.lines[self.ind_lines[bad - self.n - 2 * self.nc]].endpoints[0]
        raise NonFiniteStateError(node, tick)


def step_network(graph: NetworkGraph, states: Sequence[ConverterState], line_currents: Sequence[float],
                 voltage_setpoints: Sequence[float], loads: Injections, dt: float,
                 active: Sequence[bool] | None = None):
    """One forward-Euler step on plain per-node state records.

    ``states`` holds one record per node (passive buses use ``v`` only) and
    ``voltage_setpoints`` one entry per converter, in node order.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(voltage_setpoints) != len(graph.converter_nodes):
        raise ValueError("need one setpoint per converter")
    if active is None:
        active = [True] * len(graph.lines)
    system = ElectricalSystem(graph, dt)
    v = [s.v for s in states]
    conv = graph.converter_nodes
    x = system.pack(v, [states[k].i for k in conv], [states[k].loop_integral for k in conv], line_currents)
    if not np.all(np.isfinite(x)):
        system.check_finite(x, 0)
    sp = np.asarray(voltage_setpoints, dtype=float)
    x_new = x + dt * system.derivative(x, active, loads, sp)
    lines_new = system.line_currents(x_new, active)
    v_in, i_in, _ = system.input_side(x_new, sp)
    out = []
    for k, s in enumerate(states):
        if k in conv:
            c = conv.index(k)
            out.append(replace(s, v=x_new[k], i=x_new[system.si][c], loop_integral=x_new[system.sxi][c],
                               v_in=v_in[c], i_in=i_in[c]))
        else:
            out.append(replace(s, v=x_new[k]))
    return out, lines_new
