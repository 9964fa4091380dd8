"""How rough in time is a quadratically-forced path under rough noise?

Runs the whole-line quadratic-flux scenario at reduced replica count and
fits the time-regularity exponent from second moments of increments at the
center of the window.  The shipped preset does the same at full size; here
the point is to show the raw call sequence.

    python3 demos/burgers_path_regularity.py
"""

import numpy as np

from spdelab import SeedSpec, hoelder_fit, preset, simulate_ensemble

REPLICAS = 800

config = preset("burgers-whole-line")
t0, x = 0.1, 0.0
lags = [0.0025, 0.005, 0.01, 0.02]
probes = [(t0, x)] + [(t0 + h, x) for h in lags]

print(f"quadratic flux on [-3, 3], {REPLICAS} of the preset's {config.replicas} replicas")
res = simulate_ensemble(
    config.model, config.grid, SeedSpec(config.seed), probes, replicas=REPLICAS
)
base = res.probe_matrix[0]

pairs = []
for j, h in enumerate(lags, start=1):
    diff = np.abs(res.probe_matrix[j] - base) ** 2
    diff = diff[np.isfinite(diff)]
    pairs.append((h, float(diff.mean())))
    print(f"  lag {h:7.4f}: E|increment|^2 = {pairs[-1][1]:.3e}")

fit = hoelder_fit(pairs, p=2.0)
print()
print(f"fitted exponent {fit.exponent_estimate:.3f} +/- {fit.standard_error:.3f}")
print("bounded noise coefficients put the true value near 1/4; a few")
print("hundred replicas already land within a few hundredths of it")
