"""
What the estimators cost
========================

The spiking network only works while a node is inside an event, and even
then it only accumulates on the synapses that received a spike.  A binary
recurrent network of the same shape runs every tick; a conventional network
multiplies every weight every tick.  The meter counts accumulates and
multiply-accumulates for all three on the same spike stream.

Run from the repository root:  python3 demos/energy_comparison.py
"""

import tempfile

from nscgrid.energy import EnergyMeter, OpCounts, count_tick, energy, format_report
from nscgrid.scenario.dataset import generate_dataset
from nscgrid.scenario.metrics import energy_report
from nscgrid.scenario.pipeline import train_case
from nscgrid.scenario.presets import case_preset
from nscgrid.scenario.runner import simulate, write_run

# one layer pair, one tick, by hand
print("256 -> 256 layer, 10 input spikes:")
for kind in ("snn", "rnn", "ann"):
    c = count_tick(kind, 256, 256, 10, active=True)
    print(f"  {kind}: {c.acc:6d} acc, {c.mac:6d} mac, {energy(c) * 1e12:9.1f} pJ")
print(f"  snn while idle: {energy(count_tick('snn', 256, 256, 0, active=False)) * 1e12:.1f} pJ")

# a quiet second: no events, no spikes
meter = EnergyMeter(0, [256, 256, 256, 4])
for tick in range(1000):
    meter.tick(tick, [0, 0, 0], active=False)
print("\nan idle second per node:")
for kind, c in meter.totals.items():
    print(f"  {kind}: {energy(c):.3e} J")

# a full Case I run with trained networks metered alongside the control loop
cfg = case_preset("I")
trained = train_case(generate_dataset(cfg), cfg.snn, cfg.neuron, seed=cfg.seed)
with tempfile.TemporaryDirectory() as tmp:
    out = write_run(simulate(cfg, trained.models), tmp)
    rep = energy_report(out)
print("\nCase I, 2.5 s:")
print(format_report(rep))
print(f"ordering E_SNN <= E_RNN < E_ANN holds: {rep['verdict']}")
