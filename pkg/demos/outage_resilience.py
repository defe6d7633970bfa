"""
Losing lines in a ring
======================

Case II is a three-converter 400 V ring.  Line 2 (between buses 2 and 0)
opens at 1.0 s and line 1 (between buses 1 and 2) at 1.5 s, which leaves
bus 2 on its own.  A node with no remaining flow neighbours stops its
secondary loop and keeps its last corrections; the other two carry on
sharing between themselves.

Run from the repository root:  python3 demos/outage_resilience.py
"""

import numpy as np

from nscgrid.grid import converter_neighbors
from nscgrid.scenario.metrics import sharing_error, settling_time
from nscgrid.scenario.presets import case_preset
from nscgrid.scenario.runner import simulate

cfg = case_preset("II")
g = cfg.graph()

# who can see whom, before and after each outage
for active in ([True, True, True], [True, True, False], [True, False, False]):
    nb = converter_neighbors(g, active)
    print("lines in service", active, "->", {k: sorted(v) for k, v in nb.items()})

res = simulate(cfg)
t = res.t
err = sharing_error(res.columns, np.array(res.rows))

for start, end in ((0.5, 1.0), (1.0, 1.5), (1.5, 2.0), (2.0, 2.5)):
    sel = (t >= start) & (t < end)
    st = settling_time(t[sel], err[sel], start)
    currents = [res.column(f"i_{k}")[sel][-1] for k in range(3)]
    print(f"stage from {start:.1f} s: currents " + ", ".join(f"{i:6.2f} A" for i in currents)
          + f", sharing settles in {'never' if st is None else f'{st:.3f} s'}")

frozen = res.column("frozen_2") > 0.5
print(f"\nbus 2 frozen from t = {t[np.argmax(frozen)]:.3f} s")
print(f"buses 0 and 1 ever frozen: {bool(res.column('frozen_0').max() or res.column('frozen_1').max())}")
