"""Statistical verification layer: finite-difference increments of sampled
functions, a discrete smoothness functional for densities, kernel density
estimation, a density-certification probe built on expected increments of
test functions, time-regularity exponent fitting, moment bounds, and the
frozen-coefficient approximation error curve.

Everything is a pure function of its inputs; ensembles are built upstream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import gaussian_kde

from .solver import ModelSpec, SpaceTimeGrid, simulate_frozen_ensemble

__all__ = [
    "ApproxErrorFit",
    "BesovSplit",
    "DegenerateDistributionError",
    "DensityEstimate",
    "EnsembleSamples",
    "HoelderFit",
    "MomentSup",
    "SmoothingFit",
    "TestFunction",
    "approx_error_curve",
    "besov_functional",
    "clipped_poly_fn",
    "cos_fn",
    "default_besov_lags",
    "hoelder_fit",
    "kde",
    "moment_sup",
    "nth_increment",
    "sin_fn",
    "smoothing_probe",
    "weierstrass_fn",
]


class DegenerateDistributionError(ValueError):
    """The sample carries no spread, so no density estimate is meaningful."""


@dataclass(frozen=True)
class EnsembleSamples:
    """Realizations of the solution at one probe, one value per replica."""

    values: np.ndarray
    probe: tuple
    model_tag: str = ""
    replica_count: int = 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a nonempty 1-d array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("ensemble values must all be finite")
        if self.replica_count == 0:
            object.__setattr__(self, "replica_count", vals.size)
        elif self.replica_count != vals.size:
            raise ValueError("replica_count disagrees with len(values)")

    @staticmethod
    def from_matrix(probe_row: np.ndarray, probe: tuple, model_tag: str = "") -> "EnsembleSamples":
        """Build from one row of an ensemble probe matrix, dropping the NaN
        columns of failed replicas."""
        row = np.asarray(probe_row, dtype=float)
        return EnsembleSamples(row[np.isfinite(row)], probe, model_tag)


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density_values: np.ndarray
    bandwidth: float

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        f = np.asarray(self.density_values, dtype=float)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "density_values", f)
        if g.shape != f.shape or g.ndim != 1 or g.size < 2:
            raise ValueError("grid and density_values must be matching 1-d arrays")
        steps = np.diff(g)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid must be uniform")
        if np.any(f < 0):
            raise ValueError("density values must be nonnegative")
        mass = float(np.trapezoid(f, g))
        if not 1.0 - 1e-3 <= mass <= 1.0 + 1e-3:
            raise ValueError(f"density integrates to {mass:.6f}, not 1 within 1e-3")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass(frozen=True)
class HoelderFit:
    exponent_estimate: float
    standard_error: float
    lag_range: tuple
    moment_order_p: float


class BesovSplit(NamedTuple):
    l1_norm: float
    sup_term: float
    total: float
    lags: tuple


@dataclass(frozen=True)
class SmoothingFit:
    """Log-log slope of |E increment of a test function| against the lag."""

    slope: float
    standard_error: float
    estimates: dict
    used_lags: tuple
    excluded_lags: tuple

    def certifies_density(self, gamma: float) -> bool:
        """The certification criterion: a fitted decay order strictly above
        the test function's smoothness tag."""
        return math.isfinite(self.slope) and self.slope > gamma


@dataclass(frozen=True)
class MomentSup:
    value: float
    per_probe: dict


@dataclass(frozen=True)
class ApproxErrorFit:
    slope: float
    standard_error: float
    errors: dict
    exact_zero: bool
    excluded: tuple


@dataclass(frozen=True)
class TestFunction:
    fn: Callable
    hoelder_gamma: float
    name: str

    def __call__(self, x):
        return self.fn(x)


def sin_fn() -> TestFunction:
    return TestFunction(np.sin, 1.0, "sin")


def cos_fn() -> TestFunction:
    return TestFunction(np.cos, 1.0, "cos")


def clipped_poly_fn(coeffs, cutoff: float = 3.0) -> TestFunction:
    """Polynomial evaluated on the clamped argument, so it stays bounded."""
    poly = np.polynomial.Polynomial(coeffs)

    def fn(x):
        return poly(np.clip(x, -cutoff, cutoff))

    return TestFunction(fn, 1.0, f"clipped_poly{len(list(coeffs)) - 1}")


def weierstrass_fn(gamma: float, terms: int = 22) -> TestFunction:
    """Bounded function of fractional smoothness gamma in (0, 1): a lacunary
    cosine series with amplitudes 2^(-gamma k)."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    ks = np.arange(terms)
    amps = 2.0 ** (-gamma * ks)
    freqs = 2.0 ** ks

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.cos(np.multiply.outer(freqs, x)).T @ amps

    return TestFunction(fn, gamma, f"weierstrass{gamma:g}")


def nth_increment(values: np.ndarray, h: float, n: int, step: float = 1.0) -> np.ndarray:
    """n-th forward difference at lag h of a function sampled with the given
    uniform step: sum_j (-1)^(n-j) C(n,j) f(x + j h), returned on the subgrid
    where every term exists (n*|h| trimmed off one end).
    """
    if n < 1:
        raise ValueError("increment order n must be >= 1")
    values = np.asarray(values, dtype=float)
    shift = round(h / step)
    if shift == 0 or not math.isclose(shift * step, h, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(f"lag {h} is not a nonzero multiple of the sampling step {step}")
    span = n * abs(shift)
    if span >= values.size:
        raise ValueError("lag too wide for the sample")
    m = values.size - span
    out = np.zeros(m)
    for j in range(n + 1):
        start = j * shift if shift > 0 else span + j * shift
        out += ((-1) ** (n - j)) * math.comb(n, j) * values[start:start + m]
    return out


def _dyadic_span_levels(lags) -> float:
    lags = np.asarray(sorted(lags), dtype=float)
    if np.any(lags <= 0):
        raise ValueError("lags must be positive")
    return math.log2(lags[-1] / lags[0])


def _as_profile(density) -> tuple:
    """Accept a DensityEstimate or a plain (grid, values) pair; returns
    (grid, values, step).  The raw form skips the unit-mass requirement so
    arbitrary sampled profiles can be measured."""
    if isinstance(density, DensityEstimate):
        return density.grid, density.density_values, density.step
    grid, values = density
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.shape != values.shape or grid.ndim != 1 or grid.size < 2:
        raise ValueError("profile needs matching 1-d grid and values")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    return grid, values, float(steps[0])


def default_besov_lags(density, n: int) -> tuple:
    """Dyadic lags 2^-k that are exact multiples of the density grid step,
    from 4 steps up to a quarter of the support per increment order."""
    grid, _, dx = _as_profile(density)
    span = float(grid[-1] - grid[0])
    out = []
    k = 0
    while 2.0 ** -k > min(1.0, span / (4.0 * n)):
        k += 1
    while 2.0 ** -k >= 4.0 * dx * (1.0 - 1e-9):
        h = 2.0 ** -k
        if math.isclose(round(h / dx) * dx, h, rel_tol=1e-9):
            out.append(h)
        k += 1
    if len(out) < 3:
        raise ValueError(
            "no usable dyadic lag set for this grid; pass lags= explicitly"
        )
    return tuple(out)


def besov_functional(density, s: float, n: int | None = None, lags=None) -> BesovSplit:
    """Discrete smoothness functional of a sampled density (a
    DensityEstimate or a raw (grid, values) pair): its L1 norm plus the sup
    over a dyadic lag set of |h|^(-s) times the L1 norm of the n-th
    increment.  A bounded value as lags refine is evidence of smoothness s;
    growth is evidence against.  The lag set used is part of the result.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if n is None:
        n = math.ceil(s) + 1
    if not n > s:
        raise ValueError(f"increment order n={n} must exceed s={s}")
    if lags is None:
        lags = default_besov_lags(density, n)
    lags = tuple(sorted(float(h) for h in lags))
    if lags[-1] > 1.0 + 1e-12:
        raise ValueError("lags must satisfy |h| <= 1")
    _, f, dx = _as_profile(density)
    l1 = float(np.trapezoid(np.abs(f), dx=dx))
    sup = 0.0
    for h in lags:
        inc = nth_increment(f, h, n, step=dx)
        sup = max(sup, h ** (-s) * float(np.trapezoid(np.abs(inc), dx=dx)))
    return BesovSplit(l1, sup, l1 + sup, lags)


def _silverman_bandwidth(values: np.ndarray) -> float:
    n = values.size
    std = float(values.std())
    q75, q25 = np.percentile(values, [75, 25])
    iqr = float(q75 - q25)
    candidates = [c for c in (std, iqr / 1.34) if c > 0]
    if not candidates:
        raise DegenerateDistributionError("sample has no spread")
    return 0.9 * min(candidates) * n ** -0.2


def kde(samples: EnsembleSamples, bandwidth="auto") -> DensityEstimate:
    """Gaussian kernel density estimate with Silverman's bandwidth rule.

    The support window is the sample range plus 4 bandwidths each side.
    The grid step is snapped to a power of two so that dyadic lags of the
    smoothness functional align exactly with the grid, and samples are
    sorted first so the estimate is invariant under permutation.
    """
    if samples.replica_count < 100:
        raise ValueError("need at least 100 replicas for a density estimate")
    vals = np.sort(samples.values)
    if vals[0] == vals[-1]:
        raise DegenerateDistributionError("all sample values are identical")
    bw = _silverman_bandwidth(vals) if bandwidth == "auto" else float(bandwidth)
    if not bw > 0:
        raise ValueError("bandwidth must be positive")
    lo = vals[0] - 4.0 * bw
    hi = vals[-1] + 4.0 * bw
    dx = 2.0 ** math.floor(math.log2((hi - lo) / 1024.0))
    start = math.floor(lo / dx)
    count = math.ceil(hi / dx) - start + 1
    grid = (start + np.arange(count)) * dx
    # the estimator scales its factor by the ddof=1 std, so divide that out
    estimator = gaussian_kde(vals, bw_method=bw / float(vals.std(ddof=1)))
    dens = np.maximum(estimator(grid), 0.0)
    return DensityEstimate(grid, dens, bw)


def _line_fit(log_x: np.ndarray, log_y: np.ndarray) -> tuple:
    """Least-squares slope with its regression standard error."""
    k = log_x.size
    A = np.column_stack([log_x, np.ones(k)])
    coef, *_ = np.linalg.lstsq(A, log_y, rcond=None)
    slope = float(coef[0])
    if k <= 2:
        return slope, float("nan")
    resid = log_y - A @ coef
    s2 = float(resid @ resid) / (k - 2)
    sxx = float(np.sum((log_x - log_x.mean()) ** 2))
    return slope, math.sqrt(s2 / sxx)


def smoothing_probe(samples: EnsembleSamples, phi: TestFunction, m: int, lags) -> SmoothingFit:
    """Decay order of E[increment of phi at lag h, order m, evaluated at the
    sampled variable] as h shrinks.

    Each expectation is a Monte Carlo average; a lag whose estimate is not
    at least 3 standard errors away from zero is excluded (with a warning)
    before the log-log fit.  A fitted order strictly above the smoothness
    tag of phi certifies that the sampled law has a density.
    """
    if m < 1:
        raise ValueError("increment order m must be >= 1")
    lags = tuple(sorted(float(h) for h in lags))
    if len(lags) < 3 or _dyadic_span_levels(lags) < 2.0 - 1e-9:
        raise ValueError("lag set must span at least 3 dyadic levels")
    x = samples.values
    r = x.size
    estimates, used, excluded = {}, [], []
    for h in lags:
        inc = np.zeros_like(x)
        gross = 0.0  # pre-cancellation magnitude, to spot pure roundoff
        for j in range(m + 1):
            term = math.comb(m, j) * phi(x + j * h)
            gross += float(np.abs(term).mean())
            inc += ((-1) ** (m - j)) * term
        est = float(inc.mean())
        se = float(inc.std(ddof=1)) / math.sqrt(r) if r > 1 else 0.0
        estimates[h] = (est, se)
        if abs(est) <= max(3.0 * se, 1e-13 * gross):
            excluded.append(h)
        else:
            used.append(h)
    if excluded:
        warnings.warn(
            f"{len(excluded)} lag(s) at the Monte Carlo noise floor excluded: "
            f"{sorted(excluded)}",
            stacklevel=2,
        )
    if len(used) < 2:
        return SmoothingFit(float("nan"), float("nan"), estimates, tuple(used), tuple(excluded))
    lx = np.log([h for h in used])
    ly = np.log([abs(estimates[h][0]) for h in used])
    slope, se = _line_fit(lx, ly)
    return SmoothingFit(slope, se, estimates, tuple(used), tuple(excluded))


def hoelder_fit(moment_pairs, p: float) -> HoelderFit:
    """Time-regularity exponent from p-th moment increments: least-squares
    slope of log moment against log lag, divided by p."""
    if p < 2:
        raise ValueError("moment order p must be >= 2")
    pairs = sorted((float(h), float(mom)) for h, mom in moment_pairs)
    if len(pairs) < 4:
        raise ValueError("need at least 4 lags")
    lags = [h for h, _ in pairs]
    if _dyadic_span_levels(lags) < 2.0 - 1e-9:
        raise ValueError("lags must span at least 3 dyadic levels")
    moments = np.array([mom for _, mom in pairs])
    if np.any(moments <= 0):
        raise ValueError("moments must be positive")
    slope, se = _line_fit(np.log(lags), np.log(moments))
    return HoelderFit(slope / p, se / p, (lags[0], lags[-1]), p)


def moment_sup(ensembles, p: float) -> MomentSup:
    """Largest empirical p-th absolute moment across probes."""
    if p < 2:
        raise ValueError("moment order p must be >= 2")
    per_probe = {}
    for ens in ensembles:
        per_probe[ens.probe] = float(np.mean(np.abs(ens.values) ** p))
    if not per_probe:
        raise ValueError("no ensembles given")
    return MomentSup(max(per_probe.values()), per_probe)


def approx_error_curve(
    model: ModelSpec,
    grid: SpaceTimeGrid,
    seed,
    t: float,
    x: float,
    eps_set,
    replicas: int = 1000,
) -> ApproxErrorFit:
    """Decay order of E|u(t,x) - companion(t,x)| in the freeze window width.

    Runs the coupled frozen-coefficient simulation once per window width
    and fits the log-log slope of the mean absolute gap at the probe; the
    same noise-floor rule as the probe fit applies.  When the gap vanishes
    identically (state-independent coefficients) that is reported instead
    of a slope.
    """
    eps_set = tuple(sorted(float(e) for e in eps_set))
    if len(eps_set) < 3 or _dyadic_span_levels(eps_set) < 2.0 - 1e-9:
        raise ValueError("eps set must span at least 3 dyadic levels")
    i = grid.space_index(x)
    errors, used, excluded = {}, [], []
    for eps in eps_set:
        u_true, u_froz, _, ok, _ = simulate_frozen_ensemble(
            model, grid, seed, t, eps, replicas
        )
        gap = np.abs(u_true[i, ok] - u_froz[i, ok])
        if gap.size == 0:
            raise ValueError(f"every replica failed at eps={eps}")
        est = float(gap.mean())
        se = float(gap.std(ddof=1)) / math.sqrt(gap.size) if gap.size > 1 else 0.0
        errors[eps] = (est, se)
        if est <= 3.0 * se:
            excluded.append(eps)
        else:
            used.append(eps)
    if all(est == 0.0 for est, _ in errors.values()):
        return ApproxErrorFit(float("nan"), float("nan"), errors, True, tuple(excluded))
    if excluded:
        warnings.warn(
            f"{len(excluded)} window width(s) at the noise floor excluded", stacklevel=2
        )
    if len(used) < 2:
        return ApproxErrorFit(float("nan"), float("nan"), errors, False, tuple(excluded))
    lx = np.log(used)
    ly = np.log([errors[e][0] for e in used])
    slope, se = _line_fit(lx, ly)
    return ApproxErrorFit(slope, se, errors, False, tuple(excluded))
