"""Built-in case presets.

Cases I-V are simulation studies; case E is the two-converter laboratory rig.
Rated values, line impedances and the rig's load are tabulated data; the
remaining numbers (filters of the 400 V cases, load magnitudes, gains, stage
times, time steps) are tuning choices and are named in each preset's
``assumed`` list.
"""

from __future__ import annotations

from ..grid import ConfigurationError
from .config import ScenarioConfig

CASE_IDS = ("I", "II", "III", "IV", "V", "E")

_COMMON_ASSUMED = [
    "gains", "snn.neuron", "snn.decode_tau", "snn.stdp_config", "timeline.time", "warmup",
    "dt_electrical", "dt_control", "sweep",
]

# per-unit sharing loop tuned for 1 ms control ticks
_GAINS_48V = {"kp_voltage": 0.5, "ki_voltage": 20.0, "kp_share": 0.1, "ki_share": 40.0, "observer_gain": 50.0}
_GAINS_400V = {"kp_voltage": 0.5, "ki_voltage": 20.0, "kp_share": 0.1, "ki_share": 40.0, "observer_gain": 50.0}


def _converter(vn, p, lf, cf, d, tau, kind="stiff-source"):
    return {"rated_voltage": vn, "rated_power": p, "filter_inductance": lf, "filter_capacitance": cf,
            "amplification_ratio": d, "source_kind": kind, "tracking_time_constant": tau}


def _r(vn, p):
    return vn * vn / p


def case_i() -> dict:
    vn = 48.0
    conv = _converter(vn, 300.0, 1.5e-3, 700e-6, 2.0, 1e-3)
    return {
        "name": "I",
        "nodes": [
            {"id": 0, "converter": conv, "load": {"kind": "resistive", "value": _r(vn, 64.0)}},
            {"id": 1, "converter": conv},
        ],
        "lines": [{"resistance": 1.5, "inductance": 50e-6, "endpoints": [0, 1]}],
        "timeline": [
            {"time": 0.5, "action": "load-step", "node": 0, "value": _r(vn, 160.0)},
            {"time": 1.0, "action": "load-step", "node": 0, "value": _r(vn, 64.0)},
            {"time": 1.5, "action": "line-outage", "line": 0},
        ],
        "objective": "current",
        "gains": dict(_GAINS_48V),
        "dt_electrical": 1e-5,
        "sweep": [{"node": 0, "before": _r(vn, 64.0), "after": _r(vn, p)} for p in (96.0, 128.0, 192.0, 224.0)]
        + [{"node": 0, "before": _r(vn, p), "after": _r(vn, 64.0)} for p in (96.0, 128.0, 192.0, 224.0)],
        "assumed": _COMMON_ASSUMED + ["filter L/C/d (from the rig)", "load bus", "tracking_time_constant"],
    }


def _conv400(p=10e3):
    return _converter(400.0, p, 2e-3, 2e-3, 2.0, 2e-3)


def case_ii() -> dict:
    vn = 400.0
    base = (4e3, 2e3, 3e3)
    return {
        "name": "II",
        "nodes": [{"id": k, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, base[k])}}
                  for k in range(3)],
        "lines": [
            {"resistance": 1.5, "inductance": 50e-6, "endpoints": [0, 1]},
            {"resistance": 1.8, "inductance": 60e-6, "endpoints": [1, 2]},
            {"resistance": 2.0, "inductance": 66e-6, "endpoints": [2, 0]},
        ],
        "timeline": [
            {"time": 0.5, "action": "load-step", "node": 0, "value": _r(vn, base[0] + 2.5e3)},
            {"time": 1.0, "action": "line-outage", "line": 2},
            {"time": 1.5, "action": "line-outage", "line": 1},
            {"time": 2.0, "action": "load-step", "node": 0, "value": _r(vn, base[0])},
        ],
        "objective": "current",
        "gains": dict(_GAINS_400V),
        "dt_electrical": 1e-5,
        "sweep": [{"node": k, "before": _r(vn, base[k]), "after": _r(vn, base[k] + 2.5e3)} for k in range(3)]
        + [{"node": k, "before": _r(vn, base[k] + 2.5e3), "after": _r(vn, base[k])} for k in range(3)]
        + [{"node": 0, "before": _r(vn, base[0]), "after": _r(vn, base[0] + 1.5e3)},
           {"node": 0, "before": _r(vn, base[0] + 1.5e3), "after": _r(vn, base[0])}],
        "assumed": _COMMON_ASSUMED + ["filters", "base loads", "load step (25% of rating)"],
    }


def case_iii() -> dict:
    vn = 400.0
    return {
        "name": "III",
        "nodes": [
            {"id": 0, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, 4e3)}},
            {"id": 1, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, 2e3)}},
        ],
        "lines": [{"resistance": 3.0, "inductance": 1.5e-3, "endpoints": [0, 1]}],
        "timeline": [
            {"time": 0.5, "action": "load-step", "node": 0, "value": _r(vn, 6.5e3)},
            {"time": 1.0, "action": "load-step", "node": 0, "value": _r(vn, 4e3)},
            {"time": 1.5, "action": "line-outage", "line": 0},
        ],
        "objective": "power",
        "gains": dict(_GAINS_400V),
        "dt_electrical": 5e-5,
        "sweep": [{"node": k, "before": _r(vn, b), "after": _r(vn, b + s)}
                  for k, b in ((0, 4e3), (1, 2e3)) for s in (1.5e3, 2.5e3)]
        + [{"node": k, "before": _r(vn, b + s), "after": _r(vn, b)}
           for k, b in ((0, 4e3), (1, 2e3)) for s in (1.5e3, 2.5e3)],
        "assumed": _COMMON_ASSUMED + ["filters", "loads", "SST side referred to 400 V"],
    }


def case_iv() -> dict:
    vn = 400.0
    return {
        "name": "IV",
        "nodes": [
            {"id": 0, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, 6.4e3)}},
            {"id": 1, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, 2e3)}},
            {"id": 2, "converter": _conv400(), "load": {"kind": "resistive", "value": _r(vn, 2e3)}},
            {"id": 3, "capacitance": 1e-3},
        ],
        "lines": [
            {"resistance": 2.4, "inductance": 1e-3, "endpoints": [0, 3]},
            {"resistance": 1.2, "inductance": 0.5e-3, "endpoints": [1, 3]},
            {"resistance": 2.8, "inductance": 0.75e-3, "endpoints": [2, 3]},
        ],
        "timeline": [
            {"time": 0.5, "action": "load-step", "node": 0, "value": _r(vn, 14.4e3)},
            {"time": 1.0, "action": "load-step", "node": 0, "value": _r(vn, 6.4e3)},
            {"time": 1.5, "action": "line-outage", "line": 2},
            {"time": 2.0, "action": "load-step", "node": 0, "value": _r(vn, 4.8e3)},
        ],
        "objective": "power",
        "gains": dict(_GAINS_400V),
        "dt_electrical": 5e-5,
        "sweep": [{"node": 0, "before": _r(vn, 6.4e3), "after": _r(vn, p)} for p in (9.6e3, 12.8e3)]
        + [{"node": 0, "before": _r(vn, p), "after": _r(vn, 6.4e3)} for p in (9.6e3, 12.8e3)]
        + [{"node": k, "before": _r(vn, 2e3), "after": _r(vn, 4.5e3)} for k in (1, 2)]
        + [{"node": k, "before": _r(vn, 4.5e3), "after": _r(vn, 2e3)} for k in (1, 2)],
        "assumed": _COMMON_ASSUMED + ["filters", "hub capacitance", "base loads at II/III", "last load step"],
    }


# IEEE 14-bus branch list, zero-based bus numbers
IEEE14_BRANCHES = [
    (0, 1), (0, 4), (1, 2), (1, 3), (1, 4), (2, 3), (3, 4), (3, 6), (3, 8), (4, 5),
    (5, 10), (5, 11), (5, 12), (6, 7), (6, 8), (8, 9), (8, 13), (9, 10), (11, 12), (12, 13),
]
# IEEE 14-bus active loads in MW, scaled to the 400 V DC system below
IEEE14_LOADS_MW = {1: 21.7, 2: 94.2, 3: 47.8, 4: 7.6, 5: 11.2, 8: 29.5, 9: 9.0, 10: 3.5, 11: 6.1, 12: 13.5, 13: 14.9}


def case_v() -> dict:
    vn = 400.0
    es = (0, 1, 2, 5)
    soc0 = {0: 0.8, 1: 0.7, 2: 0.6, 5: 0.5}
    total = sum(IEEE14_LOADS_MW.values())
    nodes = []
    for k in range(14):
        nd: dict = {"id": k}
        if k in es:
            nd["converter"] = _converter(vn, 15e3, 2e-3, 2e-3, vn / 96.0, 2e-3, "battery")
            nd["battery"] = {"capacity": 3.6e5, "soc_initial": soc0[k], "soc_max": 0.9, "soc_min": 0.2,
                             "voltage": 96.0}
        else:
            nd["capacitance"] = 0.5e-3
        if k in IEEE14_LOADS_MW:
            nd["load"] = {"kind": "resistive", "value": _r(vn, 36e3 * IEEE14_LOADS_MW[k] / total)}
        if k == 7:
            nd["pv_power"] = 8e3
        nodes.append(nd)
    return {
        "name": "V",
        "nodes": nodes,
        "lines": [{"resistance": 0.5, "inductance": 0.5e-3, "endpoints": list(b)} for b in IEEE14_BRANCHES],
        "timeline": [
            {"time": 0.5, "action": "pv-power-step", "node": 7, "value": 4e3},
            {"time": 1.0, "action": "pv-power-step", "node": 7, "value": 8e3},
            {"time": 1.5, "action": "load-step", "node": 2,
             "value": _r(vn, 0.75 * 36e3 * IEEE14_LOADS_MW[2] / total)},
        ],
        "objective": "soc",
        "gains": dict(_GAINS_400V),
        "dt_electrical": 2e-5,
        "duration": 3.0,
        "assumed": _COMMON_ASSUMED + ["line impedances (uniform)", "ES placement", "PV bus and power",
                                          "load scaling", "battery capacity", "initial SOC", "filters"],
    }


def case_e() -> dict:
    vn = 40.0
    conv = _converter(vn, 50.0, 1.5e-3, 700e-6, vn / 48.0, 1e-3)
    return {
        "name": "E",
        "nodes": [
            {"id": 0, "converter": conv},
            {"id": 1, "converter": conv},
            {"id": 2, "capacitance": 100e-6, "load": {"kind": "resistive", "value": 115.0}},
        ],
        "lines": [
            {"resistance": 1.5, "inductance": 100e-6, "endpoints": [0, 2]},
            {"resistance": 3.6, "inductance": 100e-6, "endpoints": [1, 2]},
        ],
        "timeline": [
            {"time": 0.2, "action": "load-step", "node": 2, "value": 75.0},
            {"time": 1.0, "action": "line-outage", "line": 1},
            {"time": 2.0, "action": "line-restore", "line": 1},
        ],
        "objective": "current",
        "thresholds": {"sigma_v": 0.41, "sigma_i": 0.0063, "sigma_o": 0.024},
        "gains": dict(_GAINS_48V),
        "dt_electrical": 1e-5,
        "duration": 3.5,
        "sweep": [{"node": 2, "before": 115.0, "after": r} for r in (100.0, 90.0, 80.0, 65.0)]
        + [{"node": 2, "before": r, "after": 115.0} for r in (100.0, 90.0, 80.0, 65.0)],
        "assumed": _COMMON_ASSUMED + ["line inductance", "load bus capacitance", "input voltage 48 V",
                                          "stage times"],
    }


_BUILDERS = {"I": case_i, "II": case_ii, "III": case_iii, "IV": case_iv, "V": case_v, "E": case_e}


def case_preset(case_id: str) -> ScenarioConfig:
    key = str(case_id).upper()
    if key not in _BUILDERS:
        raise ConfigurationError(f"unknown case {case_id!r}; known cases: {', '.join(CASE_IDS)}")
    return ScenarioConfig.from_dict(_BUILDERS[key]())
