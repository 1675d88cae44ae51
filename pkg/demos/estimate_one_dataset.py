"""Simulate one noisy dataset, then recover the rates and the impulses.

Run with ``python demos/estimate_one_dataset.py``.
"""

import numpy as np

from impulseid import (GridSpec, ImpulseTrain, SystemParams, add_noise, estimate_low_noise,
                       extract_impulses, simulate_output)

truth = SystemParams(0.8, 1.6)
train = ImpulseTrain([2.0, 4.5, 8.25], [0.6, 0.3, 0.9])
t = 0.25 * np.arange(54)
y = add_noise(simulate_output(truth, train, 0.0, t), 2e-4, seed=1)

# grid around the truth: b1 from half to 1.5x, b2 from the mean rate to 1.5x
grid = GridSpec.truth_relative(truth.b1, truth.b2, len(y))
b1_hat, b2_hat = estimate_low_noise(y, grid)
fit = extract_impulses(y, b1_hat, b2_hat)

print(f"rates      true ({truth.b1:.3f}, {truth.b2:.3f})   estimated ({b1_hat:.3f}, {b2_hat:.3f})")
print("impulses   tau     d")
for tau, d in fit.impulses:
    print(f"         {tau:6.3f}  {d:.3f}")
print(f"initial x2 {fit.x2_init_hat:.2e}, residual {fit.residual_ss:.2e}")
