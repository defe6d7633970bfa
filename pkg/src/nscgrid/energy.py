"""Operation counting and energy estimates for SNN, binary-RNN and ANN estimators.

The RNN and ANN are never executed.  They are shadow counters driven by the
SNN's layer shapes and spike stream, so all three kinds are metered over
identical ticks.  Energy is kept as an integer number of 0.1 pJ units so
that per-tick values add up exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

KINDS = ("snn", "rnn", "ann")
E_ACC = 0.1e-12
E_MAC = 3.1e-12
# E_MAC / E_ACC as an exact integer ratio
_MAC_UNITS = 31
_UNIT_DENOM = 10 ** 13


@dataclass(frozen=True)
class OpCounts:
    acc: int = 0
    mac: int = 0

    def __post_init__(self):
        if self.acc < 0 or self.mac < 0:
            raise ValueError("operation counts must be nonnegative")

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.acc + other.acc, self.mac + other.mac)

    @property
    def units(self) -> int:
        """Energy in units of 0.1 pJ."""
        return self.acc + _MAC_UNITS * self.mac


def count_tick(kind: str, n_in: int, n_out: int, n_spk: int, active: bool) -> OpCounts:
    """Operations for one layer pair in one tick."""
    if kind == "snn":
        if n_spk > n_in:
            raise ValueError("more input spikes than inputs")
        return OpCounts(n_spk * n_out + (2 * n_out if active else 0), n_out)
    if kind == "rnn":
        if n_spk > n_in:
            raise ValueError("more input spikes than inputs")
        return OpCounts(n_spk * n_out + (n_out if active else 0), n_out)
    if kind == "ann":
        return OpCounts(2 * n_out, n_in * n_out + 3 * n_out)
    raise ValueError(f"unknown estimator kind {kind!r}")


def energy(counts: OpCounts) -> float:
    """Joules for the given counts: 0.1 pJ per accumulate, 3.1 pJ per multiply-accumulate."""
    return float(Fraction(counts.units, _UNIT_DENOM))


@dataclass
class EnergyRow:
    tick: int
    node: int
    kind: str
    acc: int
    mac: int

    @property
    def joules(self) -> float:
        return energy(OpCounts(self.acc, self.mac))


class EnergyMeter:
    """Per-node meter. The SNN is gated by the event flag; the RNN runs every tick."""

    def __init__(self, node: int, widths: Sequence[int]):
        self.node = node
        self.widths = list(widths)
        self.rows: list[EnergyRow] = []
        self.totals = {k: OpCounts() for k in KINDS}

    def tick(self, tick: int, input_spikes: Sequence[int], active: bool) -> None:
        """Record one tick; ``input_spikes[l]`` is the spike count entering layer pair l."""
        pairs = list(zip(self.widths[:-1], self.widths[1:]))
        if len(input_spikes) != len(pairs):
            raise ValueError("need one input spike count per layer pair")
        for kind in KINDS:
            c = OpCounts()
            for (n_in, n_out), spk in zip(pairs, input_spikes):
                c = c + count_tick(kind, n_in, n_out, int(spk), active if kind == "snn" else True)
            self.totals[kind] = self.totals[kind] + c
            self.rows.append(EnergyRow(tick, self.node, kind, c.acc, c.mac))


def comparative_report(rows: Sequence[EnergyRow]) -> dict:
    """Totals per kind plus the ratios used to compare estimators."""
    tot = {k: OpCounts() for k in KINDS}
    for r in rows:
        tot[r.kind] = tot[r.kind] + OpCounts(r.acc, r.mac)
    rep = {k: {"acc": c.acc, "mac": c.mac, "ops": c.acc + c.mac, "joules": energy(c)} for k, c in tot.items()}
    e_snn = rep["snn"]["joules"]
    rep["ratios"] = {
        "rnn_over_snn": rep["rnn"]["joules"] / e_snn if e_snn else float("inf"),
        "ann_over_snn": rep["ann"]["joules"] / e_snn if e_snn else float("inf"),
    }
    return rep


def format_report(rep: dict) -> str:
    lines = [f"{'kind':<5} {'acc':>14} {'mac':>14} {'energy [J]':>14}"]
    for k in KINDS:
        r = rep[k]
        lines.append(f"{k:<5} {r['acc']:>14d} {r['mac']:>14d} {r['joules']:>14.6e}")
    lines.append(f"ANN/SNN = {rep['ratios']['ann_over_snn']:.3f}, RNN/SNN = {rep['ratios']['rnn_over_snn']:.3f}")
    return "\n".join(lines)
