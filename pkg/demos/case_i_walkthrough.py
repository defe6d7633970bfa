"""
Two converters sharing a load without a communication link
==========================================================

Case I is a 48 V bus pair joined by one line.  The load at bus 0 steps from
64 W to 160 W, back to 64 W, and then the line is cut.  We train one small
spiking network per converter on a sweep of load steps, then run the
secondary control twice: once with the true neighbour values (CLC) and once
with each node relying on its own network's estimates (NSC).

Run from the repository root:  python3 demos/case_i_walkthrough.py
"""

import numpy as np

from nscgrid.scenario.dataset import generate_dataset
from nscgrid.scenario.pipeline import event_window_errors, train_case
from nscgrid.scenario.presets import case_preset
from nscgrid.scenario.runner import simulate
from nscgrid.scenario.metrics import sharing_error

cfg = case_preset("I")

# the training sweep: eight single load steps, one 100-tick segment each
data = generate_dataset(cfg)
for k, d in data.items():
    B, T, _ = d.inputs.shape
    print(f"node {k}: {B} segments x {T} ticks, estimating remote node(s) {d.remotes}")

# offline training: relay-initialised hidden layers, ridge readout, then Adam
trained = train_case(data, cfg.snn, cfg.neuron, seed=cfg.seed)
for k, h in trained.history.items():
    print(f"node {k}: loss {h[0]:.4g} -> {h[-1]:.4g}")

# both modes on the same timeline; the CLC run carries the networks in shadow
runs = {
    "clc": simulate(cfg, trained.models),
    "nsc": simulate(cfg.with_changes(mode="nsc"), trained.models),
}

for mode, res in runs.items():
    err = sharing_error(res.columns, np.array(res.rows))
    t = res.t
    print(f"\n{mode.upper()}")
    for lo, hi in ((0.45, 0.5), (0.95, 1.0), (1.45, 1.5)):
        sel = (t >= lo) & (t < hi)
        v_avg = 0.5 * (res.column("v_0") + res.column("v_1"))[sel].mean()
        print(f"  [{lo:.2f}, {hi:.2f}) s  sharing error {np.nanmean(err[sel]):7.2%}  average bus {v_avg:6.2f} V")
    print(f"  events: {len(res.events)}, frozen after the outage: "
          f"{bool(res.column('frozen_0')[t >= 1.5].all())}")

# how well did the networks follow the remote node during the first load step?
for k, errs in event_window_errors(runs["clc"], 0.5).items():
    print(f"node {k} estimate error over its first event window: "
          + ", ".join(f"{name} {e:.1%}" for name, e in errs.items()))

# The CLC run settles within a few tens of milliseconds.  The NSC run does
# not: the averaged-voltage estimate a node receives is its neighbour's
# observer state, which the training data only ever shows at nominal, and
# the current estimates lag the true step by the decoder's time constant.
# The small common-mode bias that remains is integrated by the voltage loop,
# so the bus drifts until the next disturbance.
