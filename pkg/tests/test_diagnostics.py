import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqglab import diagnostics as dg
from sqglab.solver import SimConfig, run
from sqglab.spectral import (Grid, PhysicalField, VelocityField, forward_transform, random_field,
                             riesz_velocity)


def _coeffs(field):
    return forward_transform(field).coefficients


class TestBoxAverage:
    def test_constant(self):
        g = Grid(32)
        c = _coeffs(PhysicalField(g, np.full(g.shape, 2.5)))
        assert dg.box_average(c, g, (1.0, 2.0), 0.7) == pytest.approx(2.5)

    @given(st.floats(0.05, 3.0), st.floats(-4, 4), st.floats(-4, 4))
    def test_single_mode(self, R, a, b):
        # mean of cos(2 x1 + x2) over the box, in closed form
        g = Grid(32)
        X, Y = g.mesh
        c = _coeffs(PhysicalField(g, np.cos(2 * X + Y)))
        ref = math.cos(2 * a + b) * math.sin(2 * R) / (2 * R) * math.sin(R) / R
        assert dg.box_average(c, g, (a, b), R) == pytest.approx(ref, abs=1e-12)

    def test_against_quadrature(self):
        from scipy import integrate
        from sqglab.spectral import evaluate_at
        g = Grid(16)
        th = random_field(g, kmax=3, seed=4)
        R, x0 = 0.6, (1.3, 4.0)
        val, _ = integrate.dblquad(
            lambda y, x: float(evaluate_at(th, np.array([[x, y]]))[0]),
            x0[0] - R, x0[0] + R, x0[1] - R, x0[1] + R, epsabs=1e-11)
        assert dg.box_average(_coeffs(th), g, x0, R) == pytest.approx(val / (4 * R * R), abs=1e-9)


class TestAdvectedCenter:
    def _traj(self, g):
        cfg = SimConfig(g, 0.1, 0.5, 0.01, 1.0, velocity_law="none", snapshot_stride=10)
        return cfg, run(cfg, random_field(g, kmax=3, seed=0))

    def test_no_velocity(self):
        g = Grid(32)
        cfg, traj = self._traj(g)
        path = dg.advected_center(traj, (1.0, 2.0), 0.5, cfg)
        assert np.allclose(path.points, [1.0, 2.0])

    def test_constant_velocity(self):
        g = Grid(32)
        cfg, traj = self._traj(g)
        c1 = np.zeros(g.shape, complex)
        c2 = np.zeros(g.shape, complex)
        c1[0, 0], c2[0, 0] = 0.3, -0.2
        path = dg.advected_center(traj, (1.0, 2.0), 0.5, cfg, velocity=lambda t: (c1, c2))
        assert np.allclose(path.points[-1], [1.3, 1.8], atol=1e-12)

    def test_shear(self):
        # u = (sin x2, 0): the box mean is sin(c2) sin(R) / R, constant along the path
        g = Grid(32)
        cfg, traj = self._traj(g)
        X, Y = g.mesh
        c1 = _coeffs(PhysicalField(g, np.sin(Y)))
        c2 = np.zeros(g.shape, complex)
        R = 0.8
        path = dg.advected_center(traj, (0.5, 1.1), R, cfg, velocity=lambda t: (c1, c2))
        speed = math.sin(1.1) * math.sin(R) / R
        assert np.allclose(path.points[-1], [0.5 + speed, 1.1], atol=1e-12)

    def test_backwards(self):
        g = Grid(32)
        cfg, traj = self._traj(g)
        c1 = np.zeros(g.shape, complex)
        c1[0, 0] = 1.0
        path = dg.advected_center(traj, (0.0, 0.0), 0.5, cfg, t_start=1.0, t_end=0.5,
                                  velocity=lambda t: (c1, 0 * c1))
        assert path.points[-1][0] == pytest.approx(-0.5)

    def test_radius_guard(self):
        g = Grid(32)
        cfg, traj = self._traj(g)
        with pytest.raises(ValueError):
            dg.advected_center(traj, (0.0, 0.0), 4.0, cfg)


class TestOscillation:
    def test_constant(self):
        g = Grid(64)
        p = dg.oscillation_profile(PhysicalField(g, np.ones(g.shape)), (1.0, 1.0), 0.5, 2)
        assert np.all(p.osc <= 1e-13)
        assert dg.holder_fit(p).flagged

    def test_monotone(self):
        g = Grid(64)
        p = dg.oscillation_profile(random_field(g, seed=2), (2.0, 1.0), 0.5, 2)
        assert np.all(np.diff(p.osc) <= 0)

    def test_linear_field(self):
        g = Grid(256)
        X, Y = g.mesh
        p = dg.oscillation_profile(PhysicalField(g, 2 * X + 3 * Y), (3.0, 3.0), 0.5, 4, radius=1.0)
        assert dg.holder_fit(p).delta == pytest.approx(1.0, abs=0.02)

    @pytest.mark.parametrize("delta0", [0.3, 0.5, 0.8])
    def test_cusp_prototype(self, delta0):
        g = Grid(256)
        X, _ = g.mesh
        f = PhysicalField(g, np.abs(np.sin(X)) ** delta0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dg.ResolutionWarning)
            p = dg.oscillation_profile(f, (0.0, 1.0), 0.5, 5, radius=1.0)
        est = dg.holder_fit(p, skip=1)
        assert est.delta == pytest.approx(delta0, abs=0.05)
        assert est.fit_r2 > 0.99

    def test_resolution_warning(self):
        g = Grid(32)
        with pytest.warns(dg.ResolutionWarning):
            dg.oscillation_profile(random_field(g), (0.0, 0.0), 0.5, 10)

    def test_bad_mu(self):
        g = Grid(32)
        with pytest.raises(ValueError):
            dg.oscillation_profile(random_field(g), (0.0, 0.0), 0.7, 2)

    def test_advected_frame_without_flow(self):
        g = Grid(64)
        cfg = SimConfig(g, 0.1, 0.5, 0.01, 0.5, velocity_law="none", snapshot_stride=10)
        traj = run(cfg, random_field(g, seed=1))
        field = traj[len(traj) - 1][1]
        a = dg.oscillation_profile(field, (1.0, 1.0), 0.5, 2)
        b = dg.oscillation_profile(field, (1.0, 1.0), 0.5, 2, frame="advected", traj=traj, cfg=cfg,
                                  advect_radius=1.0)
        assert np.allclose(a.osc, b.osc)


class TestVelocityHolder:
    def test_constant(self):
        g = Grid(32)
        one = PhysicalField(g, np.ones(g.shape))
        rep = dg.velocity_holder_norm(VelocityField(g, (one, one)), 0.5)
        assert rep.holder_seminorm == 0

    def test_sine_lipschitz(self):
        g = Grid(128)
        X, _ = g.mesh
        u = VelocityField(g, (PhysicalField(g, np.sin(X)), PhysicalField(g, np.zeros(g.shape))))
        rep = dg.velocity_holder_norm(u, 1.0, pairs=20000)
        assert rep.holder_seminorm == pytest.approx(1.0, rel=0.02)

    @given(st.floats(-5, 5))
    def test_mean_invariance(self, shift):
        g = Grid(32)
        u = riesz_velocity(random_field(g, seed=3))
        moved = VelocityField(g, (PhysicalField(g, u.u1 + shift), PhysicalField(g, u.u2 - shift)))
        a = dg.velocity_holder_norm(u, 0.5).holder_seminorm
        b = dg.velocity_holder_norm(moved, 0.5).holder_seminorm
        assert b == pytest.approx(a, rel=1e-9)

    def test_exponent_range(self):
        g = Grid(16)
        with pytest.raises(ValueError):
            dg.velocity_holder_norm(riesz_velocity(random_field(g)), 1.5)


class TestZoom:
    def test_constant_terminates(self):
        g = Grid(64)
        cfg = SimConfig(g, 0.1, 0.5, 0.01, 0.1, snapshot_stride=10)
        traj = run(cfg, PhysicalField(g, np.ones(g.shape)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dg.GuardWarning)
            z = dg.zoom_sequence(traj, None, (1.0, 1.0), cfg=cfg)
        assert z.terminated and len(z.levels) == 0

    def test_normalization(self, small_run):
        cfg, _, traj = small_run
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dg.GuardWarning)
            z = dg.zoom_sequence(traj, None, (math.pi, math.pi), cfg=cfg, K=2)
        for lv in z.levels:
            assert lv.scale * lv.osc_Q4_raw == pytest.approx(4.0)
            assert lv.osc_Q1 <= 4.0 + 1e-12

    def test_critical_contractions(self, critical_run):
        cfg, _, traj = critical_run
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dg.GuardWarning)
            z = dg.zoom_sequence(traj, None, (math.pi, math.pi), cfg=cfg, time=1.0)
        c = z.contractions
        assert len(c) >= 3
        assert np.count_nonzero(c < 1) >= 3
