"""Print the sign-pattern map of least-squares impulse weights over a rate grid.

``+`` marks nodes where every weight is nonnegative, ``-`` nodes where every
weight outside a small support is negative, ``.`` everything else. The true
rates sit at the corner where the ``+`` region begins.

Run with ``python demos/sign_regions.py``.
"""

import numpy as np

from impulseid import ImpulseTrain, Label, SystemParams, simulate_output, sweep_region_map
from impulseid.regions import grid_axis

t = 0.25 * np.arange(48)
y = simulate_output(SystemParams(0.5, 1.5), ImpulseTrain(t[[4, 16, 28]], [0.5, 0.9, 0.4]),
                    0.0, t)

b1v = grid_axis(0.3, 0.8, 0.025)
b2v = grid_axis(1.0, 2.2, 0.05)
rmap = sweep_region_map(y, b1v, b2v, pi=3, delta_b=0.025)
symbol = {Label.ALL_POSITIVE: "+", Label.ALL_NON_TRUE_NEGATIVE: "-", Label.MIXED: "."}
cells = {(b1, b2): symbol[lab] for b1, b2, lab in zip(rmap.b1, rmap.b2, rmap.labels)}

print("b2 \\ b1  " + "".join("|" if abs(b1 - 0.5) < 1e-9 else " " for b1 in b1v))
for b2 in b2v[::-1]:
    row = "".join(cells.get((b1, b2), " ") for b1 in b1v)
    print(f"{b2:6.2f}   {row}")
