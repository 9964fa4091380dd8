"""Stepping engine checks: deterministic convergence, noise statistics
against closed-form variances, coupling identities of the frozen-coefficient
companion, and failure handling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdelab.kernels import Domain, KernelSpec, time_integrated_l2
from spdelab.noise import SeedSpec, derive_stream, sample_slice
from spdelab.solver import (
    BlowUpError,
    DomainSpec,
    DriftSpec,
    FieldState,
    FluxScheme,
    GridAlignmentError,
    InitialCondition,
    ModelSpec,
    Scheme,
    SigmaSpec,
    SpaceTimeGrid,
    conditional_variance,
    simulate,
    simulate_ensemble,
    simulate_frozen,
    simulate_frozen_ensemble,
    step,
)

UNIT = DomainSpec.unit_interval()


def heat_model(sigma_value=0.0, horizon=0.1, amplitude=1.0):
    return ModelSpec(
        UNIT,
        DriftSpec.zero(),
        SigmaSpec.constant(sigma_value),
        InitialCondition.sine(amplitude),
        horizon_t=horizon,
    )


class TestDeterministic:
    def test_heat_decay_semi_implicit(self):
        grid = SpaceTimeGrid.for_domain(UNIT, 128, 2.5e-5, 0.1)
        rec = simulate(heat_model(), grid, SeedSpec(1), probes=[(0.1, 0.5)])
        exact = math.exp(-math.pi ** 2 * 0.1)
        assert rec.probe_values[(0.1, 0.5)] == pytest.approx(exact, rel=6e-4)

    def test_heat_decay_explicit(self):
        grid = SpaceTimeGrid.for_domain(UNIT, 128, 2.5e-5, 0.1, scheme=Scheme.EXPLICIT)
        rec = simulate(heat_model(), grid, SeedSpec(1), probes=[(0.1, 0.5)])
        exact = math.exp(-math.pi ** 2 * 0.1)
        assert rec.probe_values[(0.1, 0.5)] == pytest.approx(exact, rel=3e-4)

    def test_burgers_second_order_in_space(self):
        # noiseless Burgers against a fine-grid reference: halving dx must
        # shrink the probe error by about 4
        def value(n_space, flux=FluxScheme.CENTRAL):
            model = ModelSpec(
                UNIT,
                DriftSpec.burgers(flux),
                SigmaSpec.constant(0.0),
                InitialCondition.sine(),
                horizon_t=0.05,
            )
            grid = SpaceTimeGrid.for_domain(UNIT, n_space, 1e-5, 0.05)
            return simulate(model, grid, SeedSpec(0), probes=[(0.05, 0.5)]).probe_values[
                (0.05, 0.5)
            ]

        ref = value(512)
        errs = [abs(value(m) - ref) for m in (32, 64, 128)]
        assert 3.2 < errs[0] / errs[1] < 5.2
        assert 3.2 < errs[1] / errs[2] < 5.2
        # upwind flux is cruder but sane
        err_up = abs(value(64, FluxScheme.UPWIND) - ref)
        assert errs[1] < err_up < 5e-3

    def test_mass_conserved_without_noise(self):
        # conservative flux form: with the profile tails far from the walls
        # the discrete mass must not drift (the window is wide enough that
        # wall absorption stays below the tolerance)
        dom = DomainSpec.whole_line(4.5)
        model = ModelSpec(
            dom,
            DriftSpec.burgers(),
            SigmaSpec.constant(0.0),
            InitialCondition.gaussian_bump(0.8, 0.5),
            horizon_t=0.05,
        )
        grid = SpaceTimeGrid.for_domain(dom, 288, 1e-4, 0.05)
        rec = simulate(model, grid, SeedSpec(0), probes=[], snapshot_times=[0.0, 0.05])
        masses = [grid.dx * s.values.sum() for s in rec.snapshots]
        assert masses[1] == pytest.approx(masses[0], rel=1e-10)

    def test_walls_stay_zero(self):
        model = ModelSpec(
            UNIT,
            DriftSpec.burgers(),
            SigmaSpec.constant(1.0),
            InitialCondition.sine(0.5),
            horizon_t=0.01,
        )
        grid = SpaceTimeGrid.for_domain(UNIT, 64, 1e-4, 0.01)
        rec = simulate(model, grid, SeedSpec(5), probes=[], snapshot_times=[0.005, 0.01])
        for snap in rec.snapshots:
            assert snap.values[0] == 0.0
            assert snap.values[-1] == 0.0


class TestNoiseStatistics:
    def test_pointwise_variance_matches_closed_forms(self):
        # additive noise, no drift: the probe variance has an exact
        # eigen-decomposition expression on the grid, and the grid value
        # sits within about half a percent of the kernel integral
        n_space, dt, t = 64, 2e-5, 0.02
        model = ModelSpec(
            UNIT, DriftSpec.zero(), SigmaSpec.constant(1.0), InitialCondition.zero(), t
        )
        grid = SpaceTimeGrid.for_domain(UNIT, n_space, dt, t)
        replicas = 2000
        res = simulate_ensemble(model, grid, SeedSpec(7), [(t, 0.5)], replicas)
        assert res.ok.all()
        var = res.probe_matrix[0].var()

        steps = round(t / dt)
        m = np.arange(1, n_space)
        lam = 4.0 * np.sin(m * np.pi / (2 * n_space)) ** 2 * n_space ** 2
        a = 1.0 / (1.0 + dt * lam)
        weights = np.sin(m * np.pi * 0.5) ** 2
        exact_grid = (dt * n_space) * (2.0 / n_space) * np.sum(
            weights * a ** 2 * (1 - a ** (2 * steps)) / (1 - a ** 2)
        )
        three_se = 3.0 * math.sqrt(2.0 / (replicas - 1))
        assert abs(var / exact_grid - 1.0) < three_se

        spec = KernelSpec(Domain.UNIT_INTERVAL_DIRICHLET)
        continuum = time_integrated_l2(spec, t, t, 0.5)
        assert abs(var / continuum - 1.0) < three_se + 0.01

    def test_ensemble_column_equals_lone_run(self):
        model = ModelSpec(
            UNIT,
            DriftSpec.burgers(),
            SigmaSpec.custom(lambda x, u: 1.0 + 0.5 * np.sin(u), 0.25, 0.5),
            InitialCondition.sine(0.5),
            horizon_t=0.01,
        )
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 2.5e-4, 0.01)
        probes = [(0.005, 0.25), (0.01, 0.5)]
        res = simulate_ensemble(model, grid, SeedSpec(42), probes, replicas=5)
        for r in range(5):
            rec = simulate(model, grid, SeedSpec(42).with_replica(r), probes)
            for j, probe in enumerate(probes):
                assert rec.probe_values[probe] == res.probe_matrix[j, r]

    def test_runs_are_reproducible(self):
        model = heat_model(sigma_value=1.0, horizon=0.01)
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        a = simulate_ensemble(model, grid, SeedSpec(3), [(0.01, 0.5)], 8)
        b = simulate_ensemble(model, grid, SeedSpec(3), [(0.01, 0.5)], 8)
        assert np.array_equal(a.probe_matrix, b.probe_matrix)
        c = simulate_ensemble(model, grid, SeedSpec(4), [(0.01, 0.5)], 8)
        assert not np.array_equal(a.probe_matrix, c.probe_matrix)

    def test_probe_at_time_zero_reads_initial_profile(self):
        model = heat_model(sigma_value=1.0, horizon=0.01, amplitude=0.7)
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        rec = simulate(model, grid, SeedSpec(0), probes=[(0.0, 0.5)])
        assert rec.probe_values[(0.0, 0.5)] == pytest.approx(0.7, abs=1e-12)


class TestStep:
    def test_single_step_matches_simulate(self):
        model = heat_model(sigma_value=1.0, horizon=0.01)
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        seed = SeedSpec(11)
        noise = sample_slice(derive_stream(seed), grid, 0)
        state = FieldState(model.initial_condition.sample(grid.nodes()), 0.0)
        out = step(state, model, grid, noise)
        assert out.time == pytest.approx(1e-4)

        one = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 1e-4)
        rec = simulate(model, one, seed, probes=[], snapshot_times=[1e-4])
        assert np.array_equal(out.values, rec.snapshots[0].values)

    def test_step_rejects_mismatched_noise(self):
        model = heat_model()
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        state = FieldState(np.zeros(33), 0.0)
        stream = derive_stream(SeedSpec(0))
        bad = sample_slice(stream, SpaceTimeGrid.for_domain(UNIT, 64, 1e-4, 0.01), 0)
        with pytest.raises(ValueError):
            step(state, model, grid, bad)
        good = sample_slice(derive_stream(SeedSpec(0)), grid, 0)
        with pytest.raises(ValueError):
            step(FieldState(np.zeros(12), 0.0), model, grid, good)


class TestFrozenCompanion:
    def model(self):
        return ModelSpec(
            UNIT,
            DriftSpec.burgers(),
            SigmaSpec.custom(lambda x, u: 1.0 + 0.5 * np.sin(u), 0.25, 0.5),
            InitialCondition.sine(0.5),
            horizon_t=0.02,
        )

    def grid(self):
        return SpaceTimeGrid.for_domain(UNIT, 64, 2e-5, 0.02)

    def test_base_field_matches_plain_snapshot(self):
        pair = simulate_frozen(self.model(), self.grid(), SeedSpec(9), t=0.02, eps=0.005)
        rec = simulate(self.model(), self.grid(), SeedSpec(9), probes=[], snapshot_times=[0.015])
        assert np.array_equal(pair.base_field.values, rec.snapshots[0].values)
        assert pair.base_field.time == pytest.approx(0.015)

    def test_additive_noise_zero_drift_coupling_is_exact(self):
        # freezing changes nothing when the coefficients never depended on
        # the state, so both copies see identical updates bit for bit
        model = heat_model(sigma_value=1.0, horizon=0.02)
        pair = simulate_frozen(model, self.grid(), SeedSpec(9), t=0.02, eps=0.005)
        assert np.array_equal(pair.true_field.values, pair.frozen_field.values)

    def test_single_window_step_is_exact_even_for_state_dependence(self):
        # over one step both copies evaluate coefficients at the same field
        pair = simulate_frozen(self.model(), self.grid(), SeedSpec(2), t=0.02, eps=2e-5)
        assert np.array_equal(pair.true_field.values, pair.frozen_field.values)

    def test_wider_window_separates_copies(self):
        pair = simulate_frozen(self.model(), self.grid(), SeedSpec(2), t=0.02, eps=0.008)
        gap = np.max(np.abs(pair.true_field.values - pair.frozen_field.values))
        assert 0.0 < gap < 0.5

    def test_window_bounds_enforced(self):
        with pytest.raises(ValueError):
            simulate_frozen(self.model(), self.grid(), SeedSpec(0), t=0.02, eps=0.01)
        with pytest.raises(ValueError):
            simulate_frozen(self.model(), self.grid(), SeedSpec(0), t=0.02, eps=0.0)
        with pytest.raises(GridAlignmentError):
            simulate_frozen(self.model(), self.grid(), SeedSpec(0), t=0.02, eps=3.3e-5)

    def test_ensemble_column_matches_lone_frozen_run(self):
        ut, uf, base, ok, xs = simulate_frozen_ensemble(
            self.model(), self.grid(), SeedSpec(6), t=0.02, eps=0.004, replicas=3
        )
        assert ok.all()
        pair = simulate_frozen(
            self.model(), self.grid(), SeedSpec(6).with_replica(2), t=0.02, eps=0.004
        )
        assert np.array_equal(ut[:, 2], pair.true_field.values)
        assert np.array_equal(uf[:, 2], pair.frozen_field.values)


class TestConditionalVariance:
    def test_constant_coefficient_reduces_to_kernel_integral(self):
        spec = KernelSpec(Domain.UNIT_INTERVAL_DIRICHLET)
        xs = np.linspace(0.0, 1.0, 65)
        field = FieldState(np.sin(3.0 * xs), 0.015, nodes=xs)
        model = ModelSpec(
            UNIT, DriftSpec.zero(), SigmaSpec.constant(0.7), InitialCondition.zero(), 0.02
        )
        got = conditional_variance(model, field, 0.02, 0.005, 0.5, spec)
        want = 0.49 * time_integrated_l2(spec, 0.02, 0.005, 0.5)
        assert got == pytest.approx(want, rel=1e-10)

    def test_floor_bound_holds(self):
        spec = KernelSpec(Domain.UNIT_INTERVAL_DIRICHLET)
        xs = np.linspace(0.0, 1.0, 129)
        field = FieldState(np.cos(7.0 * xs) * 1.3, 0.05, nodes=xs)
        sigma = SigmaSpec.custom(lambda x, u: 0.5 + 0.3 * np.sin(u) ** 2, 0.25, 0.6)
        model = ModelSpec(UNIT, DriftSpec.zero(), sigma, InitialCondition.zero(), 0.06)
        floor = model.diffusion_sigma.floor_k
        for eps in (0.01, 0.03, 0.06):
            got = conditional_variance(model, field, 0.06, eps, 0.5, spec)
            assert got >= floor * time_integrated_l2(spec, 0.06, eps, 0.5) * (1 - 1e-9)

    def test_requires_node_positions(self):
        spec = KernelSpec(Domain.UNIT_INTERVAL_DIRICHLET)
        model = heat_model()
        with pytest.raises(ValueError):
            conditional_variance(model, FieldState(np.zeros(65), 0.0), 0.02, 0.005, 0.5, spec)


class TestFailureHandling:
    def big_model(self):
        return ModelSpec(
            UNIT,
            DriftSpec.burgers(),
            SigmaSpec.constant(1.0),
            InitialCondition.sine(200.0),
            horizon_t=0.01,
        )

    def test_lone_run_raises_with_location(self):
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 5e-4, 0.01)
        with pytest.raises(BlowUpError) as exc:
            simulate(self.big_model(), grid, SeedSpec(3), probes=[(0.01, 0.5)])
        assert 0.0 < exc.value.time <= 0.01
        assert 0 <= exc.value.cell <= 32

    def test_ensemble_masks_failed_replicas(self):
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 5e-4, 0.01)
        res = simulate_ensemble(self.big_model(), grid, SeedSpec(3), [(0.01, 0.5)], 4)
        assert not res.ok.any()
        assert np.isnan(res.probe_matrix).all()


class TestValidation:
    def test_grid_guards(self):
        with pytest.raises(ValueError):
            SpaceTimeGrid(0.1, 0.1, 16, 10)  # semi-implicit margin
        with pytest.raises(ValueError):
            SpaceTimeGrid(0.1, 0.006, 16, 10, scheme=Scheme.EXPLICIT)  # dt > dx^2/2
        with pytest.raises(ValueError):
            SpaceTimeGrid(0.1, 0.001, 3, 10)
        with pytest.raises(ValueError):
            SpaceTimeGrid.for_domain(UNIT, 32, 3e-4, 0.01)  # 0.01/3e-4 not whole

    def test_alignment_guards(self):
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        with pytest.raises(GridAlignmentError):
            grid.time_index(0.00015)
        with pytest.raises(GridAlignmentError):
            grid.time_index(0.011)
        with pytest.raises(GridAlignmentError):
            grid.space_index(0.017)
        with pytest.raises(GridAlignmentError):
            grid.space_index(1.03125)

    @given(
        k=st.integers(min_value=0, max_value=100),
        i=st.integers(min_value=0, max_value=32),
    )
    @settings(max_examples=40, deadline=None)
    def test_alignment_round_trip(self, k, i):
        grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        assert grid.time_index(k * grid.dt) == k
        assert grid.space_index(i * grid.dx) == i

    def test_spec_construction_guards(self):
        with pytest.raises(ValueError):
            DomainSpec(Domain.WHOLE_LINE)
        with pytest.raises(ValueError):
            DriftSpec.lipschitz(None, 1.0)
        with pytest.raises(ValueError):
            SigmaSpec.custom(None, 0.0, 1.0)
        with pytest.raises(ValueError):
            SigmaSpec(SigmaSpec.constant(1.0).kind, floor_k=-0.1)
        with pytest.raises(ValueError):
            ModelSpec(UNIT, DriftSpec.zero(), SigmaSpec.constant(1.0),
                      InitialCondition.zero(), horizon_t=0.0)

    def test_model_validate_catches_lies(self):
        lying_sigma = SigmaSpec.custom(lambda x, u: np.sin(u), 0.0, 0.1)
        m = ModelSpec(UNIT, DriftSpec.zero(), lying_sigma, InitialCondition.zero(), 0.01)
        with pytest.raises(ValueError, match="Lipschitz"):
            m.validate()

        low_floor = SigmaSpec.custom(lambda x, u: np.sin(u), 0.5, 1.0)
        m = ModelSpec(UNIT, DriftSpec.zero(), low_floor, InitialCondition.zero(), 0.01)
        with pytest.raises(ValueError, match="floor"):
            m.validate()

        bad_wall = InitialCondition(lambda x: x, 1.0, None, "ramp")
        m = ModelSpec(UNIT, DriftSpec.zero(), SigmaSpec.constant(1.0), bad_wall, 0.01)
        with pytest.raises(ValueError, match="wall"):
            m.validate()

        wide = InitialCondition.gaussian_bump(0.8, 2.0)
        dom = DomainSpec.whole_line(3.0)
        m = ModelSpec(dom, DriftSpec.zero(), SigmaSpec.constant(1.0), wide, 0.01)
        with pytest.raises(ValueError, match="window edge"):
            m.validate()

        tiny = DomainSpec.whole_line(0.5)
        narrow = InitialCondition.gaussian_bump(0.8, 0.05)
        m = ModelSpec(tiny, DriftSpec.zero(), SigmaSpec.constant(1.0), narrow, 0.1)
        with pytest.raises(ValueError, match="3 sqrt"):
            m.validate()

    def test_grid_domain_mismatch(self):
        dom = DomainSpec.whole_line(3.0)
        model = ModelSpec(dom, DriftSpec.zero(), SigmaSpec.constant(1.0),
                          InitialCondition.gaussian_bump(0.8, 0.3), 0.01)
        unit_grid = SpaceTimeGrid.for_domain(UNIT, 32, 1e-4, 0.01)
        with pytest.raises(ValueError):
            simulate(model, unit_grid, SeedSpec(0), probes=[])
