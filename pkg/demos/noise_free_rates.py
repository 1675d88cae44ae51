"""Exact rate recovery from noise-free data by closing the gap between boundaries.

Along lines ``b1 = 2 b2 + c`` the boundary of the all-positive region and the
boundary of the all-negative region are bisected; their distance vanishes
only on the line through the true rates.

Run with ``python demos/noise_free_rates.py``.
"""

import numpy as np

from impulseid import ImpulseTrain, SystemParams, estimate_noise_free, simulate_output
from impulseid.estimator import SweepLines, boundary_gap

t = 0.25 * np.arange(48)
y = simulate_output(SystemParams(0.5, 1.5), ImpulseTrain(t[[4, 16, 28]], [0.5, 0.9, 0.4]),
                    0.0, t)
box = dict(b1_bounds=(0.25, 0.75), b2_bounds=(1.0, 2.25))

lines = SweepLines(**box)
print("   c      gap")
for c in np.linspace(-2.9, -2.1, 9):
    print(f"{c:6.2f}  {boundary_gap(y, c, lines, 1e-7)[0]:.2e}")

b1, b2 = estimate_noise_free(y, **box)
print(f"estimated rates ({b1:.6f}, {b2:.6f}), true (0.5, 1.5)")
