"""Run metrics recomputed purely from a run directory's CSV files and config."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..energy import KINDS, EnergyRow, comparative_report
from .config import ScenarioConfig

SHARING_TOL = 0.02
TAIL = 0.05  # seconds averaged at the end of each stage


class RunFormatError(ValueError):
    """A run directory is missing files or has inconsistent contents."""


def read_timeseries(run_dir: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(run_dir) / "timeseries.csv"
    if not path.exists():
        raise RunFormatError(f"{path} not found")
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        data = np.array([[float(x) for x in row] for row in r])
    return cols, data.reshape(-1, len(cols))


def read_energy(run_dir: str | Path) -> list[EnergyRow]:
    path = Path(run_dir) / "energy.csv"
    if not path.exists():
        raise RunFormatError(f"{path} not found")
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [EnergyRow(int(d["tick"]), int(d["node"]), d["kind"], int(d["acc"]), int(d["mac"])) for d in r]


def read_events(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "events.csv"
    if not path.exists():
        raise RunFormatError(f"{path} not found")
    with open(path, newline="") as fh:
        return [{"node": int(d["node"]), "kind": d["kind"], "start": int(d["start_tick"]),
                 "end": int(d["end_tick"])} for d in csv.DictReader(fh)]


def converter_columns(cols: list[str]) -> list[int]:
    return [int(c.split("_")[1]) for c in cols if c.startswith("frozen_")]


def sharing_error(cols: list[str], data: np.ndarray) -> np.ndarray:
    """Per tick (max - min) / mean|x| of the shared quantity over non-frozen converters."""
    conv = converter_columns(cols)
    share = np.stack([data[:, cols.index(f"share_{k}")] for k in conv], axis=1)
    frozen = np.stack([data[:, cols.index(f"frozen_{k}")] > 0.5 for k in conv], axis=1)
    out = np.full(len(data), np.nan)
    for n in range(len(data)):
        x = share[n, ~frozen[n]]
        x = x[np.isfinite(x)]
        if len(x) >= 2:
            m = np.mean(np.abs(x))
            out[n] = (x.max() - x.min()) / m if m > 0 else 0.0
    return out


def voltage_error(cols: list[str], data: np.ndarray, nominal: float) -> np.ndarray:
    conv = converter_columns(cols)
    v = np.stack([data[:, cols.index(f"v_{k}")] for k in conv], axis=1)
    return np.abs(v.mean(axis=1) - nominal) / nominal


def _num(x) -> float | None:
    x = float(x)
    return None if math.isnan(x) else x


def settling_time(t: np.ndarray, err: np.ndarray, start: float, tol: float = SHARING_TOL) -> float | None:
    """Time after ``start`` from which ``err`` stays below ``tol``; None if never."""
    ok = ~(err >= tol)
    bad = np.flatnonzero(~ok)
    if len(bad) == 0:
        return 0.0
    last = bad[-1]
    if last == len(t) - 1:
        return None
    return float(t[last + 1] - start)


def compute_metrics(run_dir: str | Path) -> dict:
    run_dir = Path(run_dir)
    cfg = ScenarioConfig.load(run_dir / "config.json")
    cols, data = read_timeseries(run_dir)
    t = data[:, 0]
    conv = converter_columns(cols)
    nominal = next(n.converter["rated_voltage"] for n in cfg.nodes if n.converter is not None)
    share = sharing_error(cols, data)
    verr = voltage_error(cols, data, nominal)
    bounds = [0.0] + [a.time for a in cfg.timeline] + [cfg.duration]
    tail = max(1, int(round(TAIL / cfg.dt_control)))
    stages = []
    for s0, s1 in zip(bounds[:-1], bounds[1:]):
        sel = np.flatnonzero((t >= s0 - 1e-9) & (t < s1 - 1e-9))
        if len(sel) == 0:
            continue
        last = sel[-tail:]
        sh = share[last]
        stages.append({
            "start": s0,
            "end": s1,
            "final_sharing_error": _num(np.nanmean(sh)) if np.any(np.isfinite(sh)) else None,
            "final_voltage_error": _num(np.mean(verr[last])),
            "sharing_settling_time": settling_time(t[sel], share[sel], s0),
        })
    events = read_events(run_dir)
    energy_rows = read_energy(run_dir)
    metrics = {
        "case": cfg.name,
        "mode": cfg.mode,
        "ticks": int(len(t)),
        "stages": stages,
        "event_count": {str(k): sum(1 for e in events if e["node"] == k) for k in conv},
        "spike_count": {str(k): int(data[:, cols.index(f"spikes_{k}")].sum()) for k in conv},
        "event_ticks": {str(k): int(data[:, cols.index(f"event_{k}")].sum()) for k in conv},
    }
    if energy_rows:
        metrics["energy"] = comparative_report(energy_rows)
    return metrics


def energy_report(run_dir: str | Path, write: bool = True) -> dict:
    """Comparative energy totals for a run, checked against its time series.

    Every metered node contributes one row per kind per recorded tick, so the
    row count must equal ticks x nodes x kinds.  With ``write`` the totals
    go to ``energy_report.csv`` beside the inputs.
    """
    run_dir = Path(run_dir)
    rows = read_energy(run_dir)
    _, data = read_timeseries(run_dir)
    ticks = len(data)
    nodes = sorted({r.node for r in rows})
    expected = ticks * len(nodes) * len(KINDS)
    if len(rows) != expected:
        raise RunFormatError(f"energy.csv has {len(rows)} rows; {ticks} ticks x {len(nodes)} metered node(s) x "
                             f"{len(KINDS)} kinds = {expected}")
    seen = {(r.tick, r.node, r.kind) for r in rows}
    if len(seen) != len(rows):
        raise RunFormatError("energy.csv repeats a (tick, node, kind) row")
    rep = comparative_report(rows)
    e = {k: rep[k]["joules"] for k in KINDS}
    rep["nodes"] = nodes
    rep["ticks"] = ticks
    rep["snn_event_gated_acc"] = rep["snn"]["acc"]
    rep["verdict"] = bool(nodes) and e["snn"] <= e["rnn"] < e["ann"]
    if write:
        with open(run_dir / "energy_report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "acc", "mac", "joules"])
            for k in KINDS:
                w.writerow([k, rep[k]["acc"], rep[k]["mac"], repr(rep[k]["joules"])])
    return rep
