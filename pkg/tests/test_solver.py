import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab.solver import (BlowUpError, SimConfig, SimState, TrajectoryStore,
                           energy_balance_residual, interval_integrals, pde_residual,
                           rescale_solution, rescaled_config, run, step)
from sqglab.spectral import (Grid, PhysicalField, SpectralField, forward_transform,
                             inverse_transform, l2_norm, random_field, sup_norm)


def cos1(g, amp=1.0):
    X, _ = g.mesh
    return PhysicalField(g, amp * np.cos(X))


class TestConfig:
    def test_validation(self):
        g = Grid(16)
        with pytest.raises(ValueError):
            SimConfig(g, kappa=0.0, alpha=0.5, dt=0.1, t_end=1)
        with pytest.raises(ValueError):
            SimConfig(g, kappa=1.0, alpha=1.2, dt=0.1, t_end=1)
        with pytest.raises(ValueError):
            SimConfig(g, kappa=1.0, alpha=0.5, dt=0.1, t_end=1, velocity_law="custom")
        with pytest.raises(ValueError):
            SimConfig(g, kappa=1.0, alpha=0.5, dt=0.1, t_end=1, snapshot_stride=0)

    def test_custom_law_must_be_divergence_free(self):
        g = Grid(16)
        ones = np.ones(g.shape, dtype=complex)
        cfg = SimConfig(g, 1.0, 0.5, 0.1, 1.0, velocity_law="custom", multipliers=(ones, ones))
        with pytest.raises(ValueError):
            cfg.velocity_multipliers()


class TestStep:
    def test_linear_single_mode_exact(self):
        g = Grid(32)
        cfg = SimConfig(g, kappa=1.0, alpha=0.5, dt=0.05, t_end=1.0, velocity_law="none")
        traj = run(cfg, cos1(g))
        X, _ = g.mesh
        for t, s in traj:
            assert np.max(np.abs(inverse_transform(s).values - np.exp(-t) * np.cos(X))) < 1e-13

    def test_zero_stays_zero(self):
        g = Grid(16)
        cfg = SimConfig(g, 0.3, 0.4, 0.01, 0.1)
        s = SimState(0.0, SpectralField(g, np.zeros(g.shape)))
        for _ in range(5):
            s = step(s, cfg)
        assert np.all(s.theta_hat.coefficients == 0)
        assert s.time == pytest.approx(0.05)

    def test_fourth_order(self):
        g = Grid(32)
        th = random_field(g, kmax=4, seed=5)
        ends = []
        for dt in (0.04, 0.02, 0.01):
            cfg = SimConfig(g, kappa=0.05, alpha=0.4, dt=dt, t_end=0.4, snapshot_stride=1000)
            ends.append(inverse_transform(run(cfg, th)[-1][1]).values)
        e1 = np.max(np.abs(ends[0] - ends[1]))
        e2 = np.max(np.abs(ends[1] - ends[2]))
        assert 12 < e1 / e2 < 20


class TestRun:
    def test_t_end_zero(self):
        g = Grid(16)
        traj = run(SimConfig(g, 1.0, 0.5, 0.1, 0.0), cos1(g))
        assert len(traj) == 1 and traj.times[0] == 0

    def test_snapshot_stride_and_final(self):
        g = Grid(16)
        traj = run(SimConfig(g, 1.0, 0.5, 0.1, 1.05, snapshot_stride=3, velocity_law="none"), cos1(g))
        assert traj.times[-1] >= 1.05 - 0.1
        assert np.all(np.diff(traj.times) > 0)

    def test_mean_conserved(self):
        g = Grid(32)
        th = PhysicalField(g, random_field(g, seed=1).values + 0.7)
        traj = run(SimConfig(g, 0.1, 0.3, 0.01, 0.5, snapshot_stride=5), th)
        means = [s.mean for _, s in traj]
        assert np.max(np.abs(np.array(means) - means[0])) < 1e-10

    def test_norms_decay(self, small_run):
        _, _, traj = small_run
        l2 = np.array([l2_norm(s) for _, s in traj])
        sup = np.array([sup_norm(s) for _, s in traj])
        assert np.all(np.diff(l2) <= 1e-12)
        assert np.all(np.diff(sup) <= 1e-4 * sup[0])

    def test_large_kappa_sup_decreases(self):
        g = Grid(32)
        traj = run(SimConfig(g, 5.0, 0.5, 0.005, 0.2, snapshot_stride=2), random_field(g, seed=3))
        sup = np.array([sup_norm(s) for _, s in traj])
        assert np.all(np.diff(sup) < 0)

    def test_blowup_detection(self):
        g = Grid(16)
        cfg = SimConfig(g, 0.1, 0.5, 0.01, 0.1, blowup_factor=0.5)
        with pytest.raises(BlowUpError) as info:
            run(cfg, random_field(g, seed=0))
        assert info.value.state is not None
        assert info.value.state.time == 0.0

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            run(SimConfig(Grid(16), 1, 0.5, 0.1, 1), cos1(Grid(32)))


class TestTrajectoryStore:
    def test_increasing_times(self):
        g = Grid(8)
        s = SpectralField(g, np.zeros(g.shape))
        st_ = TrajectoryStore()
        st_.append(0.0, s)
        with pytest.raises(ValueError):
            st_.append(0.0, s)

    def test_lookup(self, small_run):
        _, _, traj = small_run
        assert traj.index_of(traj.times[3]) == 3
        with pytest.raises(KeyError):
            traj.index_of(0.123456)
        mid = 0.5 * (traj.times[2] + traj.times[3])
        c = traj.at(mid).coefficients
        ref = 0.5 * (traj[2][1].coefficients + traj[3][1].coefficients)
        assert np.allclose(c, ref)


class TestEnergy:
    def test_quadrature_exact_for_cubics(self):
        t = np.array([0.0, 0.3, 0.5, 1.1, 1.4])
        y = 1 + 2 * t - t**2 + 0.5 * t**3
        exact = lambda a, b: (b - a) + (b**2 - a**2) - (b**3 - a**3) / 3 + (b**4 - a**4) / 8  # noqa: E731
        got = interval_integrals(t, y)
        ref = [exact(a, b) for a, b in zip(t[:-1], t[1:])]
        assert np.allclose(got, ref, atol=1e-14)

    def test_linear_single_mode(self):
        g = Grid(32)
        cfg = SimConfig(g, 1.0, 0.5, 0.01, 1.0, velocity_law="none")
        res = energy_balance_residual(run(cfg, cos1(g)), cfg)
        assert np.max(res) <= 1e-10

    def test_constant(self):
        g = Grid(16)
        cfg = SimConfig(g, 1.0, 0.5, 0.05, 0.5)
        res = energy_balance_residual(run(cfg, PhysicalField(g, np.full(g.shape, 2.0))), cfg)
        assert np.all(res == 0)

    def test_nonlinear_small(self, small_run):
        cfg, _, traj = small_run
        assert np.max(energy_balance_residual(traj, cfg, per_unit_time=True)) < 1e-6


class TestScaling:
    def test_identity(self, small_run):
        cfg, _, traj = small_run
        out = rescale_solution(traj, 1, cfg)
        for (t, a), (s, b) in zip(traj, out):
            assert t == s
            assert np.array_equal(a.coefficients, b.coefficients)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_linear_resimulation(self, alpha):
        g = Grid(32)
        cfg = SimConfig(g, 1.0, alpha, 0.01, 0.5, velocity_law="none", snapshot_stride=10)
        traj = run(cfg, cos1(g))
        mu = 2
        out = rescale_solution(traj, mu, cfg)
        cfg2 = rescaled_config(cfg, mu)
        X, _ = cfg2.grid.mesh
        direct = run(cfg2, PhysicalField(cfg2.grid, mu ** (2 * alpha - 1) * np.cos(mu * X)))
        for t, s in out:
            ref = direct.at(t) if t not in direct.times else direct[direct.index_of(t)][1]
            closed = mu ** (2 * alpha - 1) * np.exp(-(mu ** (2 * alpha)) * t) * np.cos(mu * X)
            v = inverse_transform(s).values
            assert np.max(np.abs(v - inverse_transform(ref).values)) < 1e-8
            assert np.max(np.abs(v - closed)) < 1e-8

    def test_invalid_mu(self, small_run):
        cfg, _, traj = small_run
        with pytest.raises(ValueError):
            rescale_solution(traj, 1.5, cfg)
        with pytest.raises(ValueError):
            rescale_solution(traj, 2, cfg, times=[10.0])

    @given(st.sampled_from([2, 4]))
    def test_residual_ratio(self, mu):
        g = Grid(32)
        cfg = SimConfig(g, 0.1, 0.5, 5e-3, 0.3, snapshot_stride=4)
        traj = run(cfg, random_field(g, kmax=4, seed=2))
        base = np.max(pde_residual(traj, cfg))
        resc = np.max(pde_residual(rescale_solution(traj, mu, cfg), rescaled_config(cfg, mu)))
        assert resc <= 10 * base


def test_state_is_immutable(small_run):
    _, _, traj = small_run
    with pytest.raises((ValueError, dataclasses.FrozenInstanceError)):
        traj[0][1].coefficients[0, 0] = 1.0
