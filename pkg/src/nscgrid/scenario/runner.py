"""Closed-loop scenario execution.

One control tick consists of: apply due stage actions, sample the network,
run event capture and (when inside an event) the node's SNN, step every
secondary controller with a synchronous snapshot of neighbour values, then
advance the electrical network to the next tick.

Before t = 0 the network is commissioned for ``warmup`` seconds in CLC mode
so every run starts from a settled operating point, and the benchmark holds
are initialised from the true values at that point.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..codec import (BenchmarkHold, EventCapture, FeatureFilter, UntrainedModelError, detect, encode,
                     input_error_signals, output_event_signal)
from ..control import (DroopParams, NeighborValues, RemoteEstimate, SecondaryController, SOC_EPS,
                       nsc_bind_estimates, soc_headroom)
from ..energy import EnergyMeter
from ..grid import ElectricalSystem, converter_neighbors, load_injections, tie_line_flows, update_soc
from ..snn import SnnModel
from .config import ScenarioConfig

log = logging.getLogger(__name__)


class MissingModelError(RuntimeError):
    """NSC mode was requested without a trained model for some node."""


def initial_remotes(cfg: ScenarioConfig) -> dict[int, tuple[int, ...]]:
    """Remote converters each node estimates: its flow neighbours with all lines in service."""
    return {k: tuple(sorted(v)) for k, v in converter_neighbors(cfg.graph()).items()}


@dataclass
class RunResult:
    config: ScenarioConfig
    columns: list[str]
    rows: list[list[float]]
    events: list = field(default_factory=list)
    energy_rows: list = field(default_factory=list)
    features: dict = field(default_factory=dict)
    active: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")


class _NodeEstimator:
    """SNN inference for one node, gated by the capture state machine."""

    def __init__(self, model: SnnModel, stdp: bool, stdp_cfg):
        if not model.calibrated:
            raise UntrainedModelError(f"model for node {model.node} has no decode calibration")
        if model.encoder is None:
            raise MissingModelError(f"model for node {model.node} has no encoder ranges")
        # plasticity adapts a private copy; the published model stays untouched
        self.model = copy.deepcopy(model) if stdp else model
        self.model.reset()
        self.decoder = self.model.decoder()
        if stdp:
            self.model.enable_stdp(stdp_cfg)

    def step(self, features: np.ndarray, active: bool, just_opened: bool, hold: BenchmarkHold):
        """Return (estimate vector, input spike count, per-layer spike counts)."""
        n_layers = len(self.model.weights)
        if not active:
            if self.model.plasticity is not None:
                self.model.plasticity.enabled = False
            return hold.values.copy(), 0, [0] * n_layers
        if just_opened:
            self.model.reset()
            self.decoder.reset(hold.values)
        if self.model.plasticity is not None:
            self.model.plasticity.enabled = True
        spikes = encode(features, self.model.encoder)
        out, counts = self.model.forward_tick(spikes)
        self.decoder.step(out)
        return self.decoder.value(), int(spikes.sum()), counts


def simulate(cfg: ScenarioConfig, models: Mapping[int, SnnModel] | None = None, estimator: str = "snn",
             record_features: bool = False) -> RunResult:
    """Run a scenario and return its time series in memory.

    ``estimator`` selects where NSC neighbour values come from: ``"snn"``
    (trained models) or ``"truth"`` (exact remote values, for equivalence
    checks).  In CLC mode, models if given run in shadow for metering.
    """
    if estimator not in ("snn", "truth"):
        raise ValueError("estimator must be 'snn' or 'truth'")
    g = cfg.graph()
    dt_c, dt_e = cfg.dt_control, cfg.dt_electrical
    nsteps = int(round(dt_c / dt_e))
    conv = cfg.converter_ids
    cidx = {k: c for c, k in enumerate(conv)}
    nodes = sorted(cfg.nodes, key=lambda n: n.id)
    n_nodes = len(nodes)
    remotes = initial_remotes(cfg)

    use_snn = estimator == "snn" and (cfg.mode == "nsc" or models)
    if cfg.mode == "nsc" and estimator == "snn":
        missing = [k for k in conv if not models or k not in models]
        if missing:
            raise MissingModelError(f"nsc mode needs a trained model for node(s) {missing}")
    estimators: dict[int, _NodeEstimator] = {}
    if use_snn:
        for k in conv:
            m = models[k]
            if tuple(m.remotes) != remotes[k]:
                raise MissingModelError(f"model for node {k} estimates {m.remotes}, topology needs {remotes[k]}")
            estimators[k] = _NodeEstimator(m, cfg.snn.stdp, cfg.stdp)

    gains = cfg.secondary_gains
    ctl = {}
    droop = {}
    vn = {}
    batteries = {}
    for k in conv:
        p = g.nodes[k].converter
        vn[k] = p.rated_voltage
        droop[k] = DroopParams.from_rating(p.rated_voltage, p.rated_power)
        if g.nodes[k].battery is not None:
            batteries[k] = g.nodes[k].battery
    soc = {k: b.soc_initial for k, b in batteries.items()}
    if cfg.objective == "current":
        bases = {k: 1.0 for k in conv}
    elif cfg.objective == "power":
        bases = {k: vn[k] for k in conv}
    else:
        mean_head = float(np.mean([soc_headroom(soc[k], cfg.battery_mode, batteries[k]) for k in conv]))
        bases = {k: vn[k] / mean_head for k in conv}
    for k in conv:
        ctl[k] = SecondaryController(k, droop[k], cfg.objective, gains, bases[k])
    m_droop = np.array([droop[k].droop_gain for k in conv])
    sysm = ElectricalSystem(g, dt_e, m_droop)

    load_values = np.array([n.load.value if n.load is not None else 0.0 for n in nodes])
    pv_values = np.array([n.pv_power for n in nodes])
    active_lines = [True] * len(g.lines)
    nbr_cache: dict[tuple, dict] = {}

    def neighbours():
        key = tuple(active_lines)
        if key not in nbr_cache:
            nbr_cache[key] = converter_neighbors(g, active_lines)
        return nbr_cache[key]

    v0 = np.array([vn[conv[0]]] * n_nodes, dtype=float)
    for k in conv:
        v0[k] = vn[k]
    x = sysm.pack(v0, np.zeros(len(conv)), np.zeros(len(conv)), np.zeros(len(sysm.ind_lines)))
    x_prev = x.copy()
    sp = np.array([vn[k] for k in conv], dtype=float)
    # secondary output plus the sampled droop term; the inner loop subtracts m*i continuously
    s_elec = sp.copy()

    thresholds = cfg.event_thresholds
    holds = {k: BenchmarkHold(np.zeros(2 * len(remotes[k]))) for k in conv}
    captures = {k: EventCapture(k, holds[k]) for k in conv}
    ffilters = {k: FeatureFilter(dt_c) for k in conv}
    meters = {k: EnergyMeter(k, estimators[k].model.widths) for k in estimators}

    columns = ["t"]
    for n in nodes:
        k = n.id
        columns.append(f"v_{k}")
        if k in cidx:
            columns += [f"i_{k}", f"P_{k}", f"vstar_{k}", f"vbar_{k}", f"share_{k}", f"frozen_{k}"]
            if k in batteries:
                columns.append(f"soc_{k}")
            for j in remotes[k]:
                columns += [f"vhat_{k}_{j}", f"ihat_{k}_{j}"]
            columns += [f"event_{k}", f"spikes_{k}"]
    rows: list[list[float]] = []
    features_log = {k: [] for k in conv}
    active_log = {k: [] for k in conv}

    actions = list(cfg.timeline)
    next_action = 0
    n_warm = int(round(cfg.warmup / dt_c))
    n_run = int(round(cfg.duration / dt_c))

    for n in range(-n_warm, n_run):
        recording = n >= 0
        t = n * dt_c
        if recording:
            while next_action < len(actions) and actions[next_action].time <= t + 1e-9:
                a = actions[next_action]
                next_action += 1
                if a.action == "load-step":
                    load_values[a.node] = a.value
                elif a.action == "pv-power-step":
                    pv_values[a.node] = a.value
                elif a.action == "line-outage":
                    active_lines[a.line] = False
                elif a.action == "line-restore":
                    active_lines[a.line] = True
                elif a.action == "node-disconnect":
                    for li, ln in enumerate(g.lines):
                        if a.node in ln.endpoints:
                            active_lines[li] = False
                log.debug("t=%.4f %s", t, a.action)

        v = x[sysm.sv]
        ic = x[sysm.si]
        nb = neighbours()
        vbar_true = {k: ctl[k].observer.v_bar for k in conv}
        i_true = {k: float(ic[cidx[k]]) for k in conv}
        p_true = {k: float(v[k] * ic[cidx[k]]) for k in conv}
        gamma = {}
        for k in batteries:
            h = soc_headroom(soc[k], cfg.battery_mode, batteries[k])
            gamma[k] = p_true[k] / h if h > SOC_EPS else None

        if n == 0:
            for k in conv:
                holds[k].values = np.array([val for j in remotes[k] for val in (vbar_true[j], i_true[j])])

        # event detection from the last electrical step
        line_now = sysm.line_currents(x, active_lines)
        line_prev = sysm.line_currents(x_prev, active_lines)
        dflow = (tie_line_flows(g, line_now) - tie_line_flows(g, line_prev)) / dt_e
        dv = (x[sysm.sv] - x_prev[sysm.sv]) / dt_e
        di = (x[sysm.si] - x_prev[sysm.si]) / dt_e
        _, i_in, i_in_ref = sysm.input_side(x, s_elec)
        v_ref = s_elec - m_droop * ic

        estimates = {}
        ev_flag = {}
        spike_total = {}
        for k in conv:
            c = cidx[k]
            params = g.nodes[k].converter
            om_v, om_i = input_error_signals(params, v[k], v_ref[c], i_in[c], i_in_ref[c], dv[k], di[c])
            om_o = output_event_signal(params.filter_capacitance, dv[k], dflow[k])
            kinds = detect(om_v, om_i, om_o, thresholds) if recording else ()
            active, opened = captures[k].step(kinds, n)
            feats = ffilters[k].step(float(v[k]), float(ic[c]))
            if record_features and recording:
                features_log[k].append(feats)
                active_log[k].append(active)
            truth = np.array([val for j in remotes[k] for val in (vbar_true[j], i_true[j])])
            if k in estimators:
                est, n_in, counts = estimators[k].step(feats, active, opened, holds[k])
                captures[k].update_benchmark(est)
                if recording:
                    meters[k].tick(n, [n_in, *counts[:-1]], active)
                spike_total[k] = n_in + sum(counts)
            else:
                est = truth
                spike_total[k] = 0
            if cfg.mode == "clc" or estimator == "truth" or not recording:
                estimates[k] = (truth, est)
            else:
                estimates[k] = (est, est)
            ev_flag[k] = active

        new_sp = np.empty_like(sp)
        for k in conv:
            c = cidx[k]
            used, _ = estimates[k]
            nset = nb[k]
            if cfg.mode == "nsc" and recording:
                rem = {j: RemoteEstimate(used[2 * q], used[2 * q + 1], p_true[j] if estimator == "truth" else None)
                       for q, j in enumerate(remotes[k])}
                values = nsc_bind_estimates(rem, nset, {j: gamma.get(j) for j in nset})
            else:
                js = sorted(nset)
                values = NeighborValues({j: vbar_true[j] for j in js}, {j: i_true[j] for j in js},
                                        {j: p_true[j] for j in js}, {j: 1.0 for j in js},
                                        {j: gamma.get(j) for j in js})
            new_sp[c] = ctl[k].step(float(v[k]), i_true[k], p_true[k], values, dt_c, gamma.get(k))

        for k in batteries:
            i_bat = p_true[k] / batteries[k].voltage
            if recording:
                soc[k], _ = update_soc(soc[k], i_bat, dt_c, batteries[k])

        if recording:
            row = [t]
            for node in nodes:
                k = node.id
                row.append(float(v[k]))
                if k in cidx:
                    share = {"current": i_true[k], "power": p_true[k]}.get(cfg.objective)
                    if cfg.objective == "soc":
                        share = gamma[k] if gamma[k] is not None else float("nan")
                    row += [i_true[k], p_true[k], float(sp[cidx[k]]), vbar_true[k], share,
                            float(ctl[k].frozen)]
                    if k in batteries:
                        row.append(soc[k])
                    row += [float(val) for val in estimates[k][1]]
                    row += [float(ev_flag[k]), float(spike_total[k])]
            rows.append(row)

        sp = new_sp
        s_elec = sp + m_droop * ic
        inj = load_injections(g, t, v, load_values, pv_values)
        x, x_prev = sysm.advance(x, active_lines, inj, s_elec, nsteps)
        sysm.check_finite(x, n)

    events = [r for k in conv for r in captures[k].records]
    events.sort(key=lambda r: (r.start, r.node, r.kind))
    energy_rows = [r for k in sorted(meters) for r in meters[k].rows]
    energy_rows.sort(key=lambda r: (r.tick, r.node))
    res = RunResult(cfg, columns, rows, events, energy_rows)
    if record_features:
        res.features = {k: np.array(features_log[k]) for k in conv}
        res.active = {k: np.array(active_log[k], dtype=bool) for k in conv}
    return res


def write_run(result: RunResult, out_dir: str | Path) -> Path:
    """Write timeseries, events, energy, config and metrics into ``out_dir``."""
    from .metrics import compute_metrics

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "timeseries.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(result.columns)
        for r in result.rows:
            w.writerow([repr(float(x)) for x in r])
    dt = result.config.dt_control
    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "kind", "start_tick", "end_tick", "start_t", "end_t"])
        for e in result.events:
            w.writerow([e.node, e.kind, e.start, e.end, repr(e.start * dt), repr(e.end * dt)])
    with open(out / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "node", "kind", "acc", "mac", "joules"])
        for e in result.energy_rows:
            w.writerow([e.tick, e.node, e.kind, e.acc, e.mac, repr(e.joules)])
    result.config.save(out / "config.json")
    metrics = compute_metrics(out)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return out
