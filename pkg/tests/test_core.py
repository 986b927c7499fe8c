import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axivortex.core import (AmbientProfile, ConfigError, DomainError, Forcing, ModelConfig,
                            cost_c, f0, f0_prime, forcing_eval, quadratic_F, r_of_s, s_of_r,
                            validate_assumptions)


class TestF0:
    def test_values(self):
        assert f0(0.0) == 0.5
        assert f0(0.25) == 1.0

    def test_pole_is_domain_error(self):
        with pytest.raises(DomainError):
            f0(0.5)
        with pytest.raises(DomainError):
            f0(-0.1)

    def test_strictly_increasing_and_unbounded(self):
        s = np.linspace(0, 0.5, 10001)[:-1]
        assert np.all(np.diff(f0(s)) > 0)
        for bound in (1e3, 1e6, 1e9):
            s_close = 0.5 - 1.0 / (8 * bound)
            assert f0(s_close) > bound

    def test_derivative_matches_difference(self):
        s = np.linspace(0.01, 0.45, 50)
        h = 1e-6
        fd = (f0(s + h) - f0(s - h)) / (2 * h)
        assert np.allclose(fd, f0_prime(s), rtol=1e-7)

    @given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(0.0, 0.999))
    def test_general_r0_omega(self, r0, om, frac):
        s = frac * 0.5 / r0**2
        assert math.isclose(f0(s, r0, om), r0**2 * om**2 / (2 * (1 - 2 * r0**2 * s)), rel_tol=1e-14)


class TestCoordinates:
    def test_examples(self):
        assert s_of_r(1.0) == 0.0
        assert math.isclose(r_of_s(0.25), math.sqrt(2), rel_tol=1e-15)
        for s in (0.0, 0.1, 0.4):
            assert abs(s_of_r(r_of_s(s)) - s) <= 1e-12

    def test_inverse_on_grid(self):
        s = np.linspace(0, 0.4999, 1000)
        assert np.max(np.abs(s_of_r(r_of_s(s)) - s)) <= 1e-12
        r = np.linspace(1.0, 30.0, 1000)
        assert np.max(np.abs(r_of_s(s_of_r(r)) - r) / r) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            s_of_r(0.5)

    @given(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(0.0, 0.99))
    def test_roundtrip_property(self, r0, om, frac):
        s = frac * 0.5 / r0**2
        r = r_of_s(s, r0, om)
        assert r >= r0 * (1 - 1e-15)
        # s_of_r does not involve Omega; the pair is inverse only at Omega = 1
        if om == 1.0:
            assert abs(s_of_r(r, r0) - s) <= 1e-12


class TestAmbient:
    def test_phi_examples(self):
        amb = AmbientProfile.power_law()
        assert amb.phi(1.0) == 0.5
        assert amb.phi(0.0) == 0.0
        assert abs(amb.phi_inv(0.5) - 1.0) <= 1e-11

    def test_phi_inv_outside_range(self):
        amb = AmbientProfile.power_law()
        with pytest.raises(DomainError):
            amb.phi_inv(0.6)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.5, 2.0), st.floats(0.0, 1.0), st.floats(0.5, 1.0), st.floats(0.0, 1.0))
    def test_phi_increasing_when_A1_holds(self, A, B, alpha, z):
        amb = AmbientProfile.power_law(A, B, alpha, 1.0)
        cfg = ModelConfig(I0=(0.1, 10.0))
        rep = validate_assumptions(cfg, amb)
        if rep["A1"].passed:
            zs = np.linspace(0, 1, 257)
            assert np.all(np.diff(amb.phi(zs)) > 0)
            y = amb.phi(z)
            assert abs(amb.phi(amb.phi_inv(y)) - y) <= 1e-11

    def test_from_callable_derivative(self):
        amb = AmbientProfile.from_callable(lambda z: 1 + z * z)
        assert math.isclose(float(amb.dtheta0(0.5)), 1.0, rel_tol=1e-6)


class TestCost:
    def test_examples(self):
        q = np.array([3.0, 7.0])
        assert cost_c([0, 0], 1.7, q) == 0.0
        assert cost_c([0.25, 1], 2, [4, 6]) == 4.0
        assert math.isclose(cost_c([0.3, 0.4], 1, [1, 1]), 0.7, rel_tol=1e-15)

    def test_bad_temperature(self):
        with pytest.raises(DomainError):
            cost_c([1, 1], 0.0, [1, 1])

    @given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.floats(0.5, 3.0))
    def test_decomposition_through_quadratic(self, v, m):
        s, z, ups, zed = v[0], v[1], v[2], v[3]
        t = z / m
        c = cost_c([s, z], m, [ups, zed])
        dec = quadratic_F(s, t, 0, 0) + quadratic_F(0, 0, ups, zed) - quadratic_F(s, t, ups, zed)
        assert abs(c - dec) <= 1e-12 * max(1.0, abs(s * ups) + abs(t * zed))

    def test_broadcasting(self):
        p = np.random.default_rng(0).uniform(0, 1, (4, 3, 2))
        m = np.full((4, 3), 1.5)
        q = np.array([2.0, 3.0])
        out = cost_c(p, m, q)
        assert out.shape == (4, 3)
        assert np.allclose(out, p[..., 0] * 2 + p[..., 1] * 3 / 1.5)


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.s_max == 0.5
        assert cfg.tau == 0.5 / 16

    @pytest.mark.parametrize("kw", [dict(r0=0), dict(H=-1), dict(M=-0.1), dict(I0=(2, 1)),
                                    dict(N=0), dict(T=math.inf)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw)

    def test_bounds(self):
        cfg = ModelConfig(M=1, l=2)
        assert cfg.velocity_bound() == 3.0
        assert cfg.support_growth_bound(0.0) == cfg.l0
        assert not ModelConfig(M=1, T=1, l0=1, l=1).theorem_precondition()
        assert ModelConfig(M=0.25, T=0.5, l0=0.5, l=4).theorem_precondition()


class TestForcing:
    def test_examples(self):
        f = Forcing.default(M=1.0, g=1.0, r0=1.0)
        F0, F1 = forcing_eval(f, 0.0, 1.0, 0.3)
        assert F0 == 0.0
        assert abs(f.F1(0.0, 1.0, 50.0) - 1.0) < 1e-15
        assert math.isclose(float(f.dF0_dr(0.0, 2.0, 0.3)), math.exp(-1), rel_tol=1e-15)

    def test_analytic_derivatives(self):
        f = Forcing.default(M=0.3, g=2.0, r0=1.2)
        r, z, h = 1.7, 0.4, 1e-6
        assert math.isclose((f.F0(0, r + h, z) - f.F0(0, r - h, z)) / (2 * h),
                            float(f.dF0_dr(0, r, z)), rel_tol=1e-7)
        assert math.isclose((f.F1(0, r, z + h) - f.F1(0, r, z - h)) / (2 * h),
                            float(f.dF1_dz(0, r, z)), rel_tol=1e-7)

    def test_zero(self):
        f = Forcing.zero()
        assert np.all(np.asarray(f(0.0, np.ones(3), np.ones(3))) == 0)


class TestAssumptions:
    def test_canonical(self):
        cfg = ModelConfig()
        amb = AmbientProfile.power_law()
        rep = validate_assumptions(cfg, amb, Forcing.default(cfg.M, cfg.g, cfg.r0))
        assert rep.passed
        assert math.isclose(rep["A1'"].margin, 1.0, rel_tol=1e-12)

    def test_theta_equal_z_fails_range(self):
        amb = AmbientProfile.from_callable(lambda z: np.asarray(z, dtype=float),
                                           lambda z: np.ones_like(np.asarray(z, dtype=float)))
        rep = validate_assumptions(ModelConfig(), amb)
        assert not rep.passed
        assert "theta0_range" in rep.failures

    def test_negative_forcing_fails_B1(self):
        cfg = ModelConfig()
        bad = Forcing(lambda t, r, z: -1.0 + 0 * np.asarray(r), Forcing.default(cfg.M, 1, 1).F1)
        rep = validate_assumptions(cfg, AmbientProfile.power_law(), bad)
        assert "B1" in rep.failures

    def test_never_raises(self):
        amb = AmbientProfile.from_callable(lambda z: 1.0 / (np.asarray(z) - 0.5))
        rep = validate_assumptions(ModelConfig(), amb, Forcing.zero())
        assert not rep.passed
        assert set(rep.to_dict()) >= {"A1", "A1'", "A2", "B1", "B2", "B3"}
