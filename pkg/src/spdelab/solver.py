"""Finite-difference time stepping for the stochastic heat/Burgers equation
with space-time white noise, on [0,1] with absorbing walls or on a
symmetric window [-L, L] standing in for the whole line.

One step advances the integral-form dynamics

    u_t = u_xx - d/dx g(u) + sigma(x, u) * dW/dtdx

with implicit diffusion by default (explicit mode retained for
cross-checks), a conservative central drift flux (upwind optional), and
the left-point noise rule sigma(x, u_k) * w / dx where w is the cell
increment N(0, dt dx).  Boundary nodes stay exactly zero in both domains;
for the window domain that is the documented truncation of the line.

Everything here is deterministic given the seed: replicas own
counter-based streams, a batched ensemble consumes per replica exactly
the draws of a lone run, and blow-ups raise (single run) or mark the
replica failed (ensemble) instead of leaking non-finite values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .kernels import Domain, KernelSpec, weighted_time_integrated_l2
from .noise import NoiseSlice, SeedSpec, derive_stream

__all__ = [
    "BlowUpError",
    "DomainSpec",
    "DriftKind",
    "DriftSpec",
    "EnsembleResult",
    "FieldState",
    "FluxScheme",
    "FrozenPair",
    "GridAlignmentError",
    "InitialCondition",
    "ModelSpec",
    "Scheme",
    "SigmaKind",
    "SigmaSpec",
    "SpaceTimeGrid",
    "TrajectoryRecord",
    "conditional_variance",
    "simulate",
    "simulate_ensemble",
    "simulate_frozen",
    "simulate_frozen_ensemble",
    "step",
]


class GridAlignmentError(ValueError):
    """A requested time or position does not sit on the grid."""


class BlowUpError(RuntimeError):
    """A step produced a non-finite value; carries when and where."""

    def __init__(self, time: float, cell: int):
        super().__init__(f"solution blew up at t={time:.6g}, cell {cell}")
        self.time = time
        self.cell = cell


@dataclass(frozen=True)
class DomainSpec:
    """Spatial domain: the unit interval with absorbing walls, or a window
    [-L, L] truncating the line (L must cover the initial support plus
    6 sqrt(T) of kernel spread; tails beyond that are negligible)."""

    kind: Domain
    truncation_length: float = 0.0

    def __post_init__(self):
        if self.kind is Domain.WHOLE_LINE and not self.truncation_length > 0:
            raise ValueError("whole-line domain needs truncation_length > 0")

    def interval(self) -> tuple[float, float]:
        if self.kind is Domain.UNIT_INTERVAL_DIRICHLET:
            return 0.0, 1.0
        return -self.truncation_length, self.truncation_length

    @staticmethod
    def unit_interval() -> "DomainSpec":
        return DomainSpec(Domain.UNIT_INTERVAL_DIRICHLET)

    @staticmethod
    def whole_line(truncation_length: float) -> "DomainSpec":
        return DomainSpec(Domain.WHOLE_LINE, truncation_length)


class DriftKind(enum.Enum):
    ZERO = "zero"
    BURGERS_HALF_SQUARE = "burgers_half_square"
    LIPSCHITZ_CUSTOM = "lipschitz_custom"


class FluxScheme(enum.Enum):
    CENTRAL = "central"
    UPWIND = "upwind"


@dataclass(frozen=True)
class DriftSpec:
    """Drift nonlinearity g in -d/dx g(u)."""

    kind: DriftKind
    fn: Callable | None = None
    lipschitz_constant: float | None = None
    flux: FluxScheme = FluxScheme.CENTRAL

    def __post_init__(self):
        if self.kind is DriftKind.LIPSCHITZ_CUSTOM:
            if self.fn is None or self.lipschitz_constant is None:
                raise ValueError("custom drift needs fn and lipschitz_constant")

    @property
    def is_zero(self) -> bool:
        return self.kind is DriftKind.ZERO

    def evaluate(self, u):
        if self.kind is DriftKind.ZERO:
            return np.zeros_like(u)
        if self.kind is DriftKind.BURGERS_HALF_SQUARE:
            return 0.5 * u * u
        return self.fn(u)

    @staticmethod
    def zero() -> "DriftSpec":
        return DriftSpec(DriftKind.ZERO)

    @staticmethod
    def burgers(flux: FluxScheme = FluxScheme.CENTRAL) -> "DriftSpec":
        return DriftSpec(DriftKind.BURGERS_HALF_SQUARE, flux=flux)

    @staticmethod
    def lipschitz(fn: Callable, lipschitz_constant: float) -> "DriftSpec":
        return DriftSpec(DriftKind.LIPSCHITZ_CUSTOM, fn=fn, lipschitz_constant=lipschitz_constant)


class SigmaKind(enum.Enum):
    ADDITIVE_CONSTANT = "additive_constant"
    CUSTOM_LIPSCHITZ = "custom_lipschitz"


@dataclass(frozen=True)
class SigmaSpec:
    """Noise coefficient sigma(x, u) with its declared bounds: sigma^2 >= floor_k
    everywhere and |sigma(x, r) - sigma(x, v)| <= lipschitz_l1 |r - v|.
    Custom callables must broadcast over numpy arrays in both arguments."""

    kind: SigmaKind
    value: float = 1.0
    fn: Callable | None = None
    floor_k: float = 0.0
    lipschitz_l1: float = 0.0

    def __post_init__(self):
        if self.floor_k < 0:
            raise ValueError("floor_k must be >= 0")
        if self.kind is SigmaKind.CUSTOM_LIPSCHITZ and self.fn is None:
            raise ValueError("custom sigma needs fn")

    @property
    def is_state_independent(self) -> bool:
        return self.kind is SigmaKind.ADDITIVE_CONSTANT

    def evaluate(self, x, u):
        if self.kind is SigmaKind.ADDITIVE_CONSTANT:
            return np.broadcast_to(np.float64(self.value), np.broadcast_shapes(np.shape(x), np.shape(u))).copy()
        return np.asarray(self.fn(x, u), dtype=float)

    @staticmethod
    def constant(value: float) -> "SigmaSpec":
        return SigmaSpec(SigmaKind.ADDITIVE_CONSTANT, value=value, floor_k=value * value)

    @staticmethod
    def custom(fn: Callable, floor_k: float, lipschitz_l1: float) -> "SigmaSpec":
        return SigmaSpec(
            SigmaKind.CUSTOM_LIPSCHITZ, fn=fn, floor_k=floor_k, lipschitz_l1=lipschitz_l1
        )


@dataclass(frozen=True)
class InitialCondition:
    """Initial profile with its regularity tag alpha; support_radius bounds
    where |u0| is non-negligible and gates the window-size check."""

    fn: Callable
    hoelder_alpha: float = 1.0
    support_radius: float | None = None
    name: str = "custom"

    def sample(self, xs: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(xs), dtype=float)

    @staticmethod
    def zero() -> "InitialCondition":
        return InitialCondition(lambda x: np.zeros_like(x), 1.0, 0.0, "zero")

    @staticmethod
    def sine(amplitude: float = 1.0, mode: int = 1) -> "InitialCondition":
        return InitialCondition(
            lambda x: amplitude * np.sin(mode * math.pi * x), 1.0, None, f"sine{mode}"
        )

    @staticmethod
    def gaussian_bump(amplitude: float = 1.0, width: float = 0.5, center: float = 0.0):
        # radius where the tail falls below 1e-12 of one
        radius = abs(center) + width * math.sqrt(2.0 * max(math.log(abs(amplitude) * 1e12), 1.0))
        return InitialCondition(
            lambda x: amplitude * np.exp(-((x - center) ** 2) / (2.0 * width * width)),
            1.0,
            radius,
            "gaussian_bump",
        )


@dataclass(frozen=True)
class ModelSpec:
    """One equation instance: domain, drift g, noise coefficient sigma,
    initial profile, and the time horizon."""

    domain: DomainSpec
    drift_g: DriftSpec
    diffusion_sigma: SigmaSpec
    initial_condition: InitialCondition
    horizon_t: float

    def __post_init__(self):
        if not self.horizon_t > 0:
            raise ValueError("horizon_t must be > 0")

    def validate(self, spot_checks: int = 64) -> None:
        """Spot-check the declared coefficient bounds on random points.

        Deterministic: a fixed-seed generator draws (x, r, v) triples; the
        sigma Lipschitz bound and the sigma^2 floor must hold on all of
        them, and a custom drift must honor its declared constant.
        """
        rng = np.random.Generator(np.random.Philox(key=np.array([0xC0FFEE, 0], dtype=np.uint64)))
        lo, hi = self.domain.interval()
        xs = rng.uniform(lo, hi, spot_checks)
        rs = rng.normal(0.0, 3.0, spot_checks)
        vs = rng.normal(0.0, 3.0, spot_checks)
        sig = self.diffusion_sigma
        sr = sig.evaluate(xs, rs)
        sv = sig.evaluate(xs, vs)
        gap = np.abs(sr - sv) - sig.lipschitz_l1 * np.abs(rs - vs)
        if np.any(gap > 1e-9 * (1.0 + np.abs(rs - vs))):
            raise ValueError("sigma violates its declared Lipschitz constant")
        if np.any(sr * sr < sig.floor_k - 1e-12):
            raise ValueError("sigma^2 drops below its declared floor")
        g = self.drift_g
        if g.kind is DriftKind.LIPSCHITZ_CUSTOM:
            gr = g.evaluate(rs)
            gv = g.evaluate(vs)
            if np.any(np.abs(gr - gv) > g.lipschitz_constant * np.abs(rs - vs) + 1e-9):
                raise ValueError("drift violates its declared Lipschitz constant")
        u0 = self.initial_condition
        if self.domain.kind is Domain.UNIT_INTERVAL_DIRICHLET:
            ends = u0.sample(np.array([0.0, 1.0]))
            if np.any(np.abs(ends) > 1e-12):
                raise ValueError("initial profile must vanish at both walls")
        else:
            # coarse truncation gate: the profile must already be negligible
            # at the artificial walls, and the window must dwarf the
            # diffusive spread over the horizon
            length = self.domain.truncation_length
            peak = float(np.max(np.abs(u0.sample(xs)))) + 1.0
            walls = u0.sample(np.array([-length, -0.95 * length, 0.95 * length, length]))
            if np.any(np.abs(walls) > 1e-6 * peak):
                raise ValueError("initial profile is not negligible near the window edge")
            if length < 3.0 * math.sqrt(self.horizon_t):
                raise ValueError("window half-length must be at least 3 sqrt(T)")


class Scheme(enum.Enum):
    SEMI_IMPLICIT = "semi_implicit"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid: n_space cells of width dx (n_space + 1 nodes, the two
    end nodes pinned to zero) and n_time steps of size dt."""

    dx: float
    dt: float
    n_space: int
    n_time: int
    spatial_origin: float = 0.0
    scheme: Scheme = Scheme.SEMI_IMPLICIT

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be > 0")
        if self.n_space < 4 or self.n_time < 1:
            raise ValueError("need n_space >= 4 and n_time >= 1")
        if self.scheme is Scheme.EXPLICIT and self.dt > self.dx * self.dx / 2.0 * (1 + 1e-12):
            raise ValueError(
                f"explicit scheme needs dt <= dx^2/2 = {self.dx ** 2 / 2:.3g}, got {self.dt}"
            )
        if self.scheme is Scheme.SEMI_IMPLICIT and self.dt >= 10.0 * self.dx * self.dx:
            raise ValueError(
                "semi-implicit stability margin: dt must stay below 10 dx^2"
            )

    @property
    def horizon(self) -> float:
        return self.n_time * self.dt

    @property
    def cfl_ratio(self) -> float:
        return self.dt / (self.dx * self.dx)

    def nodes(self) -> np.ndarray:
        return self.spatial_origin + self.dx * np.arange(self.n_space + 1)

    def time_index(self, t: float) -> int:
        k = round(t / self.dt)
        if not math.isclose(k * self.dt, t, rel_tol=0, abs_tol=1e-9 * max(1.0, t)):
            raise GridAlignmentError(f"time {t} not on the dt={self.dt} grid")
        if not 0 <= k <= self.n_time:
            raise GridAlignmentError(f"time {t} outside horizon {self.horizon}")
        return k

    def space_index(self, x: float) -> int:
        i = round((x - self.spatial_origin) / self.dx)
        if not math.isclose(
            self.spatial_origin + i * self.dx, x, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(x))
        ):
            raise GridAlignmentError(f"position {x} not on the dx={self.dx} grid")
        if not 0 <= i <= self.n_space:
            raise GridAlignmentError(f"position {x} outside the window")
        return i

    @staticmethod
    def for_domain(
        domain: DomainSpec,
        n_space: int,
        dt: float,
        horizon: float,
        scheme: Scheme = Scheme.SEMI_IMPLICIT,
    ) -> "SpaceTimeGrid":
        lo, hi = domain.interval()
        dx = (hi - lo) / n_space
        n_time = round(horizon / dt)
        if not math.isclose(n_time * dt, horizon, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(f"horizon {horizon} is not a whole number of dt={dt} steps")
        return SpaceTimeGrid(dx, dt, n_space, n_time, spatial_origin=lo, scheme=scheme)


@dataclass
class FieldState:
    """Solution values on the nodes at one time level."""

    values: np.ndarray
    time: float
    nodes: np.ndarray | None = None

    def copy(self) -> "FieldState":
        return FieldState(self.values.copy(), self.time, self.nodes)


@dataclass
class TrajectoryRecord:
    probe_values: dict
    final_state: FieldState
    snapshots: list
    replica_id: int


@dataclass
class FrozenPair:
    """Coupled endpoint fields: the true solution, the copy whose
    coefficients were frozen at t - eps, and the shared base field."""

    true_field: FieldState
    frozen_field: FieldState
    base_field: FieldState
    eps: float


@dataclass
class EnsembleResult:
    """Per-replica probe values in replica order; failed replicas carry
    NaN columns and ok=False."""

    probes: list
    probe_matrix: np.ndarray  # (n_probes, n_replicas)
    ok: np.ndarray  # (n_replicas,) bool
    replica_ids: np.ndarray


@lru_cache(maxsize=64)
def _implicit_factor(n_interior: int, ratio: float):
    # banded Cholesky of I + ratio * tridiag(-1, 2, -1), upper form
    ab = np.zeros((2, n_interior))
    ab[0, 1:] = -ratio
    ab[1, :] = 1.0 + 2.0 * ratio
    return cholesky_banded(ab, check_finite=False)


class _Engine:
    """Precomputed stepping context for one (model, grid) pair; state is a
    (nodes, replicas) matrix advanced in lockstep."""

    def __init__(self, model: ModelSpec, grid: SpaceTimeGrid):
        lo, hi = model.domain.interval()
        if not math.isclose(grid.spatial_origin, lo, rel_tol=0, abs_tol=1e-12):
            raise ValueError("grid origin does not match the domain")
        if not math.isclose(grid.spatial_origin + grid.n_space * grid.dx, hi, rel_tol=1e-12):
            raise ValueError("grid extent does not match the domain")
        self.model = model
        self.grid = grid
        self.xs = grid.nodes()
        self.x_int = self.xs[1:-1][:, None]
        self.noise_scale = 1.0 / grid.dx  # cell increment already has sd sqrt(dt dx)
        if grid.scheme is Scheme.SEMI_IMPLICIT:
            self.factor = _implicit_factor(grid.n_space - 1, grid.cfl_ratio)
        else:
            self.factor = None

    def initial(self, n_replicas: int) -> np.ndarray:
        col = self.model.initial_condition.sample(self.xs)
        u = np.tile(col[:, None], (1, n_replicas))
        u[0, :] = 0.0
        u[-1, :] = 0.0
        return u

    def drift_term(self, u: np.ndarray) -> np.ndarray:
        g = self.model.drift_g
        if g.is_zero:
            return 0.0
        if g.flux is FluxScheme.CENTRAL:
            gu = g.evaluate(u)
            return -(gu[2:] - gu[:-2]) / (2.0 * self.grid.dx)
        # upwind: pick the flux side by the sign of the interface average
        gu = g.evaluate(u)
        avg = 0.5 * (u[1:] + u[:-1])  # interfaces i-1/2, shape (n_space, R)
        flux = np.where(avg >= 0.0, gu[:-1], gu[1:])
        return -(flux[1:] - flux[:-1]) / self.grid.dx

    def sigma_at(self, u: np.ndarray) -> np.ndarray:
        return self.model.diffusion_sigma.evaluate(self.x_int, u[1:-1])

    def advance(self, u, w_slice, drift_override=None, sigma_override=None):
        """One step in place; w_slice is the (n_space, R) cell-increment
        matrix of this level, interior node i consuming row i."""
        drift = self.drift_term(u) if drift_override is None else drift_override
        sigma = self.sigma_at(u) if sigma_override is None else sigma_override
        rhs = u[1:-1] + self.grid.dt * drift + sigma * (w_slice[1:] * self.noise_scale)
        if self.grid.scheme is Scheme.SEMI_IMPLICIT:
            # finite checks are ours: blown-up columns are caught after the step
            u[1:-1] = cho_solve_banded((self.factor, False), rhs, check_finite=False)
        else:
            lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (self.grid.dx * self.grid.dx)
            u[1:-1] = rhs + self.grid.dt * lap
        return u


def step(state: FieldState, model: ModelSpec, grid: SpaceTimeGrid, noise: NoiseSlice) -> FieldState:
    """Advance one field by one time step with the given noise slice.
    Wall entries are pinned to zero on entry; that is the state space."""
    if noise.values.shape != (grid.n_space,):
        raise ValueError("noise slice does not match the grid")
    eng = _Engine(model, grid)
    u = state.values.astype(float, copy=True)[:, None]
    if u.shape[0] != grid.n_space + 1:
        raise ValueError("state length must be n_space + 1 nodes")
    u[0] = 0.0
    u[-1] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        eng.advance(u, noise.values[:, None])
    out = u[:, 0]
    if not np.all(np.isfinite(out)):
        cell = int(np.argmax(~np.isfinite(out)))
        raise BlowUpError(state.time + grid.dt, cell)
    return FieldState(out, state.time + grid.dt, eng.xs)


def _noise_block(streams, grid, start, count):
    """(count, n_space, R) increments, column r from replica stream r."""
    out = np.empty((count, grid.n_space, len(streams)))
    scale = math.sqrt(grid.dt * grid.dx)
    for r, stream in enumerate(streams):
        out[:, :, r] = stream.standard_normal((count, grid.n_space)) * scale
    return out


_CHUNK_TARGET = 2 ** 24  # ~128 MB of noise per chunk


def _chunk_steps(grid, n_replicas):
    per_step = grid.n_space * max(n_replicas, 1)
    return max(1, min(256, _CHUNK_TARGET // per_step))


class _BatchRun:
    """Lockstep ensemble driver with blow-up isolation."""

    def __init__(self, model, grid, seed: SeedSpec, replicas, replica_start):
        model.validate()
        self.eng = _Engine(model, grid)
        self.grid = grid
        self.replica_ids = np.arange(replica_start, replica_start + replicas)
        self.streams = [derive_stream(seed.with_replica(int(r))) for r in self.replica_ids]
        self.u = self.eng.initial(replicas)
        self.ok = np.ones(replicas, dtype=bool)
        self.blow_cell = np.full(replicas, -1)
        self.k = 0

    def _mask_failures(self):
        bad = ~np.isfinite(self.u).all(axis=0)
        newly = bad & self.ok
        if np.any(newly):
            for c in np.where(newly)[0]:
                self.blow_cell[c] = int(np.argmax(~np.isfinite(self.u[:, c])))
            self.ok[newly] = False
            self.u[:, newly] = 0.0  # stop inf propagation; column is dead

    def run_to(self, k_target, on_step=None):
        # overflow is how divergence announces itself; masking handles it
        with np.errstate(over="ignore", invalid="ignore"):
            while self.k < k_target:
                count = min(_chunk_steps(self.grid, len(self.streams)), k_target - self.k)
                block = _noise_block(self.streams, self.grid, self.k, count)
                for j in range(count):
                    self.eng.advance(self.u, block[j])
                    self.k += 1
                    self._mask_failures()
                    if on_step is not None:
                        on_step(self.k, self.u)

    def field(self, r: int) -> np.ndarray:
        return self.u[:, r]


def _check_probes(grid, probes):
    out = []
    for t, x in probes:
        out.append((grid.time_index(t), grid.space_index(x)))
    return out


def simulate(
    model: ModelSpec,
    grid: SpaceTimeGrid,
    seed: SeedSpec,
    probes,
    snapshot_times=(),
) -> TrajectoryRecord:
    """One replica over the horizon; returns the probed values, the final
    field, and any requested snapshots.  Bit-reproducible given the seed."""
    idx = _check_probes(grid, probes)
    snap_idx = {grid.time_index(t): t for t in snapshot_times}
    run = _BatchRun(model, grid, seed, 1, seed.replica_id)
    collected = {}
    snaps = []

    def on_step(k, u):
        if not run.ok[0]:
            raise BlowUpError(k * grid.dt, int(run.blow_cell[0]))
        for (kk, ii), probe in zip(idx, probes):
            if kk == k:
                collected[probe] = float(u[ii, 0])
        if k in snap_idx:
            snaps.append(FieldState(u[:, 0].copy(), snap_idx[k], run.eng.xs))

    # probes at t = 0 read the initial field
    for (kk, ii), probe in zip(idx, probes):
        if kk == 0:
            collected[probe] = float(run.u[ii, 0])
    if 0 in snap_idx:
        snaps.append(FieldState(run.u[:, 0].copy(), 0.0, run.eng.xs))
    k_last = max([k for k, _ in idx] + list(snap_idx) + [grid.n_time])
    run.run_to(k_last, on_step)
    final = FieldState(run.u[:, 0].copy(), k_last * grid.dt, run.eng.xs)
    return TrajectoryRecord(collected, final, snaps, int(seed.replica_id))


def simulate_ensemble(
    model: ModelSpec,
    grid: SpaceTimeGrid,
    seed: SeedSpec,
    probes,
    replicas: int,
    replica_start: int = 0,
) -> EnsembleResult:
    """Lockstep ensemble of independent replicas; column r reproduces
    exactly what ``simulate`` with replica_id = replica_start + r yields."""
    idx = _check_probes(grid, probes)
    run = _BatchRun(model, grid, seed, replicas, replica_start)
    matrix = np.full((len(probes), replicas), np.nan)
    for j, (kk, ii) in enumerate(idx):
        if kk == 0:
            matrix[j] = run.u[ii]

    def on_step(k, u):
        for j, (kk, ii) in enumerate(idx):
            if kk == k:
                matrix[j] = u[ii]

    run.run_to(max((k for k, _ in idx), default=grid.n_time), on_step)
    matrix[:, ~run.ok] = np.nan
    return EnsembleResult(list(probes), matrix, run.ok, run.replica_ids)


def _frozen_window(run: _BatchRun, model, grid, k_target):
    """Advance true and frozen copies up to step k_target sharing the
    noise; the frozen copy keeps the drift field and noise coefficient
    evaluated at the field stored on entry."""
    eng = run.eng
    base = run.u.copy()
    drift_f = eng.drift_term(base)
    sigma_f = eng.sigma_at(base)
    u_true = run.u
    u_froz = base.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        while run.k < k_target:
            count = min(_chunk_steps(grid, len(run.streams)), k_target - run.k)
            block = _noise_block(run.streams, grid, run.k, count)
            for j in range(count):
                eng.advance(u_true, block[j])
                eng.advance(u_froz, block[j], drift_override=drift_f, sigma_override=sigma_f)
                run.k += 1
                run._mask_failures()
                bad = ~np.isfinite(u_froz).all(axis=0)
                if np.any(bad & run.ok):
                    run.ok[bad] = False
                    u_froz[:, bad] = 0.0
    return base, u_true, u_froz


def simulate_frozen(
    model: ModelSpec, grid: SpaceTimeGrid, seed: SeedSpec, t: float, eps: float
) -> FrozenPair:
    """True solution and its frozen-coefficient companion at time t.

    The true path runs to t - eps as in ``simulate`` (same stream, same
    code path), then both copies advance to t driven by the same noise
    slices; the companion's drift field and noise coefficient stay pinned
    at the stored field u(t - eps).  Requires 0 < eps < t/2, both on the
    time grid.
    """
    k_t = grid.time_index(t)
    k_e = grid.time_index(eps)
    if not 0 < eps < t / 2.0:
        raise ValueError(f"need 0 < eps < t/2, got eps={eps}, t={t}")
    run = _BatchRun(model, grid, seed, 1, seed.replica_id)
    run.run_to(k_t - k_e)
    base, u_true, u_froz = _frozen_window(run, model, grid, k_t)
    if not run.ok[0]:
        raise BlowUpError(t, int(run.blow_cell[0]))
    xs = run.eng.xs
    return FrozenPair(
        FieldState(u_true[:, 0].copy(), t, xs),
        FieldState(u_froz[:, 0].copy(), t, xs),
        FieldState(base[:, 0].copy(), t - eps, xs),
        eps,
    )


def simulate_frozen_ensemble(
    model: ModelSpec,
    grid: SpaceTimeGrid,
    seed: SeedSpec,
    t: float,
    eps: float,
    replicas: int,
    replica_start: int = 0,
):
    """Ensemble variant: returns (true, frozen, base) node matrices of
    shape (nodes, replicas) plus the ok mask."""
    k_t = grid.time_index(t)
    k_e = grid.time_index(eps)
    if not 0 < eps < t / 2.0:
        raise ValueError(f"need 0 < eps < t/2, got eps={eps}, t={t}")
    run = _BatchRun(model, grid, seed, replicas, replica_start)
    run.run_to(k_t - k_e)
    base, u_true, u_froz = _frozen_window(run, model, grid, k_t)
    u_true = u_true.copy()
    u_true[:, ~run.ok] = np.nan
    u_froz[:, ~run.ok] = np.nan
    return u_true, u_froz, base, run.ok, run.eng.xs


def conditional_variance(
    model: ModelSpec,
    frozen_field: FieldState,
    t: float,
    eps: float,
    x: float,
    spec: KernelSpec,
) -> float:
    """Variance of the noise integral over [t - eps, t] when the noise
    coefficient is pinned at the given field: the squared kernel integrated
    against sigma(y, u(t-eps, y))^2.  With sigma^2 >= K everywhere this is
    at least K times ``time_integrated_l2``."""
    if frozen_field.nodes is None:
        raise ValueError("frozen_field must carry its node positions")
    if not 0.0 < eps <= t:
        raise ValueError(f"need 0 < eps <= t, got eps={eps}, t={t}")
    sig = model.diffusion_sigma.evaluate(frozen_field.nodes, frozen_field.values)
    weight = np.asarray(sig, dtype=float) ** 2
    return weighted_time_integrated_l2(spec, t, eps, x, frozen_field.nodes, weight)
