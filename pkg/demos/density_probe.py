"""Does the law of u(t, x) have a density, and how smooth is it?

Two complementary probes on the same ensemble:

  1. the smoothing probe fits the decay of E[increment of a test function
     evaluated at the samples]; decay faster than the test function's own
     smoothness certifies that a density exists;
  2. a kernel density estimate is pushed through the Besov-style
     functional, whose finiteness across lag scales reflects the density's
     integrated smoothness.

    python3 demos/density_probe.py
"""

from spdelab import (
    DomainSpec,
    DriftSpec,
    EnsembleSamples,
    InitialCondition,
    ModelSpec,
    SeedSpec,
    SigmaSpec,
    SpaceTimeGrid,
    besov_functional,
    kde,
    simulate_ensemble,
    sin_fn,
    smoothing_probe,
)

REPLICAS = 3000
T, X = 0.02, 0.5

domain = DomainSpec.unit_interval()
model = ModelSpec(
    domain, DriftSpec.zero(), SigmaSpec.constant(1.0), InitialCondition.sine(0.2), T
)
grid = SpaceTimeGrid.for_domain(domain, 64, 1e-4, T)
res = simulate_ensemble(model, grid, SeedSpec(11), [(T, X)], replicas=REPLICAS)
samples = EnsembleSamples.from_matrix(res.probe_matrix[0], (T, X))
print(f"{samples.replica_count} samples of u({T}, {X})")

fit = smoothing_probe(samples, sin_fn(), m=4, lags=[0.05, 0.1, 0.2, 0.4])
print()
print(f"smoothing probe: slope {fit.slope:.2f} over lags {fit.used_lags}")
print(f"  certifies a density against smoothness tag 1: {fit.certifies_density(1.0)}")

density = kde(samples)
print()
print(f"KDE: {density.grid.size} points, bandwidth {density.bandwidth:.4f}")
for s in (0.2, 0.4, 0.8):
    split = besov_functional(density, s)
    print(f"  s = {s}: L1 {split.l1_norm:.3f} + sup {split.sup_term:.3f} = {split.total:.3f}")
print()
print("the functional barely moves below s = 1/2 and inflates beyond it,")
print("matching a density that is about half an order smoother than a step")
