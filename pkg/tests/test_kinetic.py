import time

import numpy as np
import pytest

from bcmodel import (
    ModelParams,
    NegativityError,
    PiecewiseConstantDensity,
    PiecewiseLinearFunction,
    SolverConfig,
    blocks_density,
    classify,
    derivative,
    euler_step,
    moments,
    solve,
    stationarity_residual,
    uniform_density,
)
from bcmodel.kinetic import (
    _DerivativeParts,
    derivative_reference,
    gain_boltzmann_form,
    project_cell_averages,
)

from conftest import oracle_rhs, random_density, safe_eval_points


class TestDerivative:
    def test_matches_table_reference(self, rng):
        for _ in range(6):
            I = int(rng.integers(3, 9))
            f = random_density(rng, I)
            params = ModelParams(delta=float(rng.uniform(0.05, 1.0)),
                                 w=float(rng.uniform(0.1, 0.9)))
            pts = safe_eval_points(f, params, rng, count=30)
            D = derivative(f, params)
            ref = derivative_reference(f, params, pts)
            assert np.allclose(D(pts), ref, atol=1e-11)

    def test_matches_brute_force_quadrature(self, rng):
        for _ in range(6):
            I = int(rng.integers(3, 9))
            f = random_density(rng, I)
            params = ModelParams(delta=float(rng.uniform(0.05, 1.0)),
                                 w=float(rng.uniform(0.1, 0.9)))
            pts = safe_eval_points(f, params, rng, count=30)
            D = derivative(f, params)
            assert np.allclose(D(pts), oracle_rhs(f.levels, params.delta, params.w, pts),
                               atol=1e-10)

    def test_mass_and_mean_conservation(self, rng):
        for _ in range(8):
            f = random_density(rng, int(rng.integers(4, 40)))
            params = ModelParams(delta=float(rng.uniform(0.05, 1.0)),
                                 w=float(rng.uniform(0.1, 0.9)))
            D = derivative(f, params)
            assert abs(D.integral()) <= 1e-12
            assert abs(D.first_moment()) <= 1e-12

    def test_uniform_example_51_points(self):
        # spec-scale instance: uniform density, delta = 0.5, w = 0.5
        f = uniform_density(10)
        params = ModelParams(delta=0.5, w=0.5)
        D = derivative(f, params)
        pts = np.linspace(0, 1, 51)
        # the derivative is continuous here (no interior level jumps)
        want = oracle_rhs(f.levels, 0.5, 0.5, pts)
        assert np.max(np.abs(D(pts) - want)) <= 1e-6

    def test_piecewise_linear_contract(self, rng):
        f = random_density(rng, 12)
        params = ModelParams(delta=0.3, w=0.7)
        D = derivative(f, params)
        assert isinstance(D, PiecewiseLinearFunction)
        assert D.breakpoints[0] == 0.0 and D.breakpoints[-1] == 1.0
        assert np.all(np.diff(D.breakpoints) > 0)
        # O(I^2) case boundaries
        assert D.breakpoints.size <= 3 * (13 * 13) + 3 * 13 + 2

    def test_boltzmann_form_cross_check(self, rng):
        for w in (0.75, 0.9, 0.3):
            f = random_density(rng, 7, allow_zeros=False)
            params = ModelParams(delta=0.3, w=w)
            parts = _DerivativeParts(f, params)
            pts = safe_eval_points(f, params, rng, count=25)
            got = parts.gain_value(pts)
            want = gain_boltzmann_form(f, params, pts)
            assert np.allclose(got, want, atol=1e-10)

    def test_boltzmann_form_rejects_half(self):
        f = uniform_density(4)
        with pytest.raises(ValueError, match="singular"):
            gain_boltzmann_form(f, ModelParams(0.3, 0.5), [0.5])


class TestEulerStep:
    def cfg(self, f, delta=0.4, w=0.5, dt=0.1, policy="reject"):
        return SolverConfig(params=ModelParams(delta, w), cell_count=f.cell_count,
                            dt=dt, horizon=1.0, negativity_policy=policy)

    def test_dt_zero_is_identity(self, rng):
        f = random_density(rng, 16)
        out = euler_step(f, self.cfg(f, dt=0.0))
        assert np.allclose(out.levels, f.levels, rtol=1e-13, atol=1e-15)

    def test_unit_mass_after_step(self, rng):
        for _ in range(5):
            f = random_density(rng, int(rng.integers(8, 40)))
            out = euler_step(f, self.cfg(f, delta=float(rng.uniform(0.1, 0.9))))
            assert abs(out.levels.mean() - 1.0) <= 1e-12

    def test_projection_of_linear_ramp(self):
        # ramp 4x on [0, 1/2] (zero elsewhere): cell averages on a 2-cell grid
        # are (1, 0); scaled to unit mass (8x) they are (2, 0)
        ramp = PiecewiseLinearFunction(np.array([0.0, 0.5, 1.0]),
                                       np.array([0.0, 0.0]), np.array([4.0, 0.0]))
        assert np.allclose(project_cell_averages(ramp, 2), [1.0, 0.0], atol=1e-14)
        unit = PiecewiseLinearFunction(np.array([0.0, 0.5, 1.0]),
                                       np.array([0.0, 0.0]), np.array([8.0, 0.0]))
        assert np.allclose(project_cell_averages(unit, 2), [2.0, 0.0], atol=1e-14)

    def test_projection_matches_step_arithmetic(self, rng):
        # stepping must equal the generic projection of f + dt * derivative
        f = random_density(rng, 10)
        cfg = self.cfg(f, delta=0.35, w=0.6, dt=0.05)
        out = euler_step(f, cfg)
        D = derivative(f, cfg.params)
        want = f.levels + cfg.dt * project_cell_averages(D, 10)
        assert np.allclose(out.levels, want, atol=1e-10)

    def test_negativity_reject_and_clamp(self):
        # dt > 1/2 with a wide window drives boundary cells negative
        f = uniform_density(16)
        with pytest.raises(NegativityError, match="cell"):
            euler_step(f, self.cfg(f, delta=1.0, dt=0.6))
        out = euler_step(f, self.cfg(f, delta=1.0, dt=0.6, policy="clamp_renormalize"))
        assert np.all(out.levels >= 0)
        assert abs(out.levels.mean() - 1.0) <= 1e-12


class TestSolverConfig:
    def test_validation(self):
        p = ModelParams(0.4, 0.5)
        with pytest.raises(ValueError):
            SolverConfig(params=p, cell_count=1)
        with pytest.raises(ValueError):
            SolverConfig(params=p, dt=-0.1)
        with pytest.raises(ValueError):
            SolverConfig(params=p, dt=2.0, horizon=1.0)
        with pytest.raises(ValueError):
            SolverConfig(params=p, negativity_policy="elsewhere")
        with pytest.raises(ValueError):
            SolverConfig(params=p, horizon=1.0, snapshot_times=(2.0,))
        cfg = SolverConfig(params=p, horizon=1.0, snapshot_times=(0.9, 0.1))
        assert cfg.snapshot_times == (0.1, 0.9)


class TestSolve:
    def test_dt_zero_rejected(self):
        p = ModelParams(0.4, 0.5)
        cfg = SolverConfig(params=p, cell_count=8, dt=0.0, horizon=1.0)
        with pytest.raises(ValueError, match="dt > 0"):
            solve(uniform_density(8), cfg)

    def test_snapshots_at_nearest_step(self):
        p = ModelParams(0.4, 0.5)
        cfg = SolverConfig(params=p, cell_count=8, dt=0.4, horizon=2.0,
                           snapshot_times=(0.0, 0.5, 2.0))
        snaps, _ = solve(uniform_density(8), cfg)
        assert [t for t, _ in snaps] == [0.0, 0.5, 2.0]

    def test_single_block_below_delta_reaches_total_at_mean(self):
        # support [0.3, 0.45], diameter 0.15 < delta 0.2
        f0 = blocks_density([{"center": 0.375, "mass": 1.0, "width": 0.15}], 40)
        params = ModelParams(0.2, 0.5)
        cfg = SolverConfig(params=params, cell_count=40, dt=0.1, horizon=60.0)
        snaps, diag = solve(f0, cfg)
        rep = classify(snaps[-1][1], params)
        assert rep.classification == "total"
        assert rep.components[0][0] == pytest.approx(moments(f0, 2).mean, abs=1e-9)
        assert diag.mu1_drift() <= 1e-9

    def test_uniform_concentrates_into_spikes(self):
        params = ModelParams(0.2, 0.5)
        cfg = SolverConfig(params=params, cell_count=64, dt=0.1, horizon=100.0)
        snaps, _ = solve(uniform_density(64), cfg)
        final = snaps[-1][1]
        # nearly all mass collects into a handful of cells
        mass_sorted = np.cumsum(np.sort(final.cell_masses())[::-1])
        cells_for_99pct = int(np.searchsorted(mass_sorted, 0.99) + 1)
        assert cells_for_99pct <= 8
        rep = classify(final, params)
        assert rep.n_components >= 2

    def test_symmetric_initial_stays_palindromic(self):
        params = ModelParams(0.3, 0.75)
        cfg = SolverConfig(params=params, cell_count=50, dt=0.1, horizon=40.0,
                           snapshot_times=tuple(float(t) for t in range(0, 41, 10)))
        snaps, _ = solve(uniform_density(50), cfg)
        for _, dens in snaps:
            assert np.max(np.abs(dens.levels - dens.levels[::-1])) <= 1e-10

    def test_support_shrinks_monotonically(self, rng):
        params = ModelParams(0.25, 0.5)
        cfg = SolverConfig(params=params, cell_count=48, dt=0.1, horizon=50.0)
        snaps, diag = solve(random_density(rng, 48), cfg)
        lo, hi = diag.support_lo, diag.support_hi
        assert np.all(np.diff(lo) >= -1)   # one-cell slack for projection smear
        assert np.all(np.diff(hi) <= 1)
        assert lo[-1] >= lo[0] and hi[-1] <= hi[0]

    def test_diagnostics_series_contract(self, rng):
        params = ModelParams(0.4, 0.5)
        cfg = SolverConfig(params=params, cell_count=32, dt=0.1, horizon=5.0)
        snaps, diag = solve(uniform_density(32), cfg)
        n = int(round(5.0 / 0.1)) + 1
        assert diag.times.size == n
        assert np.all(np.abs(diag.mass - 1) <= 1e-12)
        assert np.all(np.diff(diag.mu2) <= 1e-10)
        assert np.all(diag.sigma[:-1] + 1e-12 >= diag.sigma[1:])

    def test_diagnostics_csv(self, tmp_path):
        params = ModelParams(0.4, 0.5)
        cfg = SolverConfig(params=params, cell_count=16, dt=0.2, horizon=1.0)
        _, diag = solve(uniform_density(16), cfg)
        p = tmp_path / "diag.csv"
        diag.to_csv(p)
        header = p.read_text().splitlines()[0]
        assert header == "t,mass,mu1,mu2,sigma,max_level,clamped_mass,residual"


class TestStationarity:
    def test_uniform_not_stationary(self):
        assert stationarity_residual(uniform_density(20), ModelParams(0.3, 0.5)) > 0.1

    def test_isolated_blocks_residual_is_intra_block_scale(self):
        # two isolated one-cell blocks: the sup norm of the derivative is the
        # within-block redistribution, bounded by (2/w + 2) * level * mass,
        # while the cell-averaged load vanishes (the block is stationary for
        # the projected dynamics)
        params = ModelParams(0.2, 0.5)
        for I in (10, 40, 160):
            levels = np.zeros(I)
            levels[int(0.2 * I)] = I / 2.0
            levels[int(0.8 * I)] = I / 2.0
            f = PiecewiseConstantDensity(levels)
            res = stationarity_residual(f, params)
            level, mass = I / 2.0, 0.5
            assert res <= (2.0 / params.w + 2.0) * level * mass
            assert res >= 0.1 * level * mass
            parts = _DerivativeParts(f, params)
            cell = parts.cell_integrals()
            assert np.max(np.abs(I * cell)) <= 1e-9

    def test_projected_residual_decays_in_converged_run(self):
        params = ModelParams(0.4, 0.5)
        cfg = SolverConfig(params=params, cell_count=100, dt=0.1, horizon=100.0)
        _, diag = solve(uniform_density(100), cfg)
        assert diag.projected_residual[-1] <= 1e-4 * diag.projected_residual[0]


class TestConvergenceOrder:
    def test_l1_differences_scale_linearly_in_dt(self):
        params = ModelParams(0.4, 0.5)
        I = 50
        f0 = uniform_density(I)
        finals = {}
        for dt in (0.2, 0.1, 0.05, 0.025, 0.0125):
            cfg = SolverConfig(params=params, cell_count=I, dt=dt, horizon=10.0)
            snaps, _ = solve(f0, cfg, collect_diagnostics=False)
            finals[dt] = snaps[-1][1].levels
        errs = [np.abs(finals[dt] - finals[dt / 2]).mean() for dt in (0.2, 0.1, 0.05, 0.025)]
        slope = float(np.polyfit(np.log([0.2, 0.1, 0.05, 0.025]), np.log(errs), 1)[0])
        assert 0.8 <= slope <= 1.2


class TestComplexityTrend:
    def test_per_step_cost_scales_like_i_squared_log(self, rng):
        # growth-trend check with generous slack; worst-case dense densities
        params = ModelParams(0.3, 0.7)
        times = {}
        for I in (40, 160):
            lv = rng.uniform(0.2, 2.0, I)
            f = PiecewiseConstantDensity(lv / lv.mean())
            cfg = SolverConfig(params=params, cell_count=I, dt=0.01, horizon=0.1)
            best = np.inf
            for _ in range(3):
                t0 = time.perf_counter()
                solve(f, cfg, collect_diagnostics=False)
                best = min(best, time.perf_counter() - t0)
            times[I] = best
        # I^2 log I predicts ~21x; allow wide margin but reject super-cubic
        assert times[160] / times[40] < 70.0


class TestReferenceRowCoverage:
    def test_reference_collects_rows(self, rng):
        f = random_density(rng, 6)
        params = ModelParams(0.5, 0.75)
        rows = set()
        derivative_reference(f, params, np.array([0.5]), row_sink=rows)
        assert rows <= set(range(1, 13))
        assert rows & {2, 7, 9, 11}
