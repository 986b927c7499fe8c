import json
import math

import numpy as np
import pytest

from axivortex.core import AmbientProfile, Forcing, ModelConfig, r_of_s
from axivortex.dual import SolverOptions, barycenter_selection, solve_dual
from axivortex.dynamics import (ModelBreakdown, PreconditionError, QuadraticSurrogate,
                                SupportBoundError, divergence_check, divergence_field,
                                euler_step, simulate, velocity)
from axivortex.measure import FreeBoundary, ParticleMeasure, support_radius
from axivortex.netflow import w1_distance

AMB = AmbientProfile.power_law()


class TestVelocity:
    def test_zero_forcing(self, solved):
        state, _ = solved
        assert np.all(velocity(state, 0.0, Forcing.zero()) == 0.0)

    def test_bound_example(self):
        assert ModelConfig(M=1, l=2).velocity_bound() == 3.0

    def test_single_atom_formula(self):
        cfg = ModelConfig()
        sig = ParticleMeasure.create([[1.0, 1.0]])
        state, _ = solve_dual(sig, cfg, AMB, SolverOptions(n_z=128))
        f = Forcing.default(cfg.M, cfg.g, cfg.r0)
        sb, zb = barycenter_selection(state)
        V = velocity(state, 0.0, f)
        r = r_of_s(sb[0])
        assert math.isclose(V[0, 0], 2 * cfg.M * (1 - math.exp(-(r - 1))), rel_tol=1e-14)
        assert math.isclose(V[0, 1], cfg.M * (1 - math.exp(-zb[0])), rel_tol=1e-14)
        assert np.linalg.norm(V[0]) <= cfg.velocity_bound(support_radius(sig))


class TestEuler:
    def test_examples(self):
        sig = ParticleMeasure.create([[1.0, 1.0]])
        assert euler_step(sig, np.zeros((1, 2)), 0.1).atoms.tobytes() == sig.atoms.tobytes()
        new = euler_step(sig, [[2.0, 0.0]], 0.1)
        assert np.allclose(new.atoms, [[1.2, 1.0]])
        assert math.isclose(w1_distance(sig.atoms, sig.weights, new.atoms, new.weights), 0.2,
                            rel_tol=1e-12)
        assert new.weights.tobytes() == sig.weights.tobytes()

    def test_errors(self):
        sig = ParticleMeasure.create([[1.0, 1.0]])
        with pytest.raises(ValueError):
            euler_step(sig, [[0.0, 0.0]], 0.0)
        with pytest.raises(ModelBreakdown):
            euler_step(sig, [[-20.0, 0.0]], 0.1)

    def test_support_growth(self, rng):
        sig = ParticleMeasure.create(rng.uniform(0.2, 1, (6, 2)))
        V = rng.normal(size=(6, 2))
        V *= 0.5 / np.linalg.norm(V, axis=1, keepdims=True)
        new = euler_step(sig, V, 0.1)
        assert support_radius(new) <= support_radius(sig) + 0.05 + 1e-15


class TestSimulate:
    def test_invariants(self, trajectory, dyn_cfg):
        w0 = trajectory.sigmas[0].weights.tobytes()
        tau, C0 = dyn_cfg.tau, dyn_cfg.velocity_bound()
        for k, (sig, d) in enumerate(zip(trajectory.sigmas, trajectory.diagnostics)):
            assert sig.weights.tobytes() == w0
            assert d["support_radius"] <= dyn_cfg.support_growth_bound(d["t"]) + 1e-9
            assert d["gap"] >= -1e-9
        for k, V in enumerate(trajectory.velocities):
            rad = trajectory.diagnostics[k]["support_radius"]
            assert np.max(np.linalg.norm(V, axis=1)) <= dyn_cfg.velocity_bound(rad)
        sig = trajectory.sigmas
        for j in range(0, len(sig), 4):
            for k in range(j + 1, len(sig), 5):
                w1 = w1_distance(sig[j].atoms, sig[j].weights, sig[k].atoms, sig[k].weights)
                assert w1 <= C0 * tau * (k - j)

    def test_zero_forcing_is_stationary(self, zero_trajectory):
        s0 = zero_trajectory.sigmas[0]
        b0 = zero_trajectory.states[0].boundary.rho
        for sig, st in zip(zero_trajectory.sigmas, zero_trajectory.states):
            assert sig.atoms.tobytes() == s0.atoms.tobytes()
            assert st.boundary.rho.tobytes() == b0.tobytes()

    def test_refinement_in_time(self, dyn_sigma):
        f = None
        finals = []
        for N in (4, 8):
            cfg = ModelConfig(M=0.25, T=0.5, N=N, l0=0.5, l=4.0)
            f = Forcing.default(cfg.M, cfg.g, cfg.r0)
            finals.append(simulate(dyn_sigma, cfg, AMB, f, SolverOptions(n_z=128)).sigmas[-1])
        a, b = finals
        cfg4 = ModelConfig(M=0.25, T=0.5, N=4, l0=0.5, l=4.0)
        assert w1_distance(a.atoms, a.weights, b.atoms, b.weights) <= cfg4.velocity_bound() * cfg4.tau

    def test_precondition(self, dyn_sigma):
        cfg = ModelConfig(M=1, T=1, l0=1, l=1)
        with pytest.raises(PreconditionError):
            simulate(dyn_sigma, cfg, AMB, Forcing.zero())
        big = ParticleMeasure.create([[1.0, 1.0]])
        with pytest.raises(PreconditionError):
            simulate(big, ModelConfig(M=0.25, T=0.5, l0=0.5, l=4), AMB, Forcing.zero())

    def test_bound_violation_detected(self, dyn_sigma, dyn_cfg):
        # a forcing far above M breaks the velocity bound on the first step
        strong = Forcing(lambda t, r, z: 50.0 + 0 * np.asarray(r), lambda t, r, z: 0 * np.asarray(r))
        with pytest.raises(SupportBoundError) as exc:
            simulate(dyn_sigma, dyn_cfg, AMB, strong, SolverOptions(n_z=64))
        assert len(exc.value.trajectory) >= 1

    def test_write(self, trajectory, tmp_path):
        paths = trajectory.write(tmp_path)
        assert len(paths) == 2 * len(trajectory) + 1
        diags = json.loads((tmp_path / "diagnostics.json").read_text())
        assert len(diags) == len(trajectory)
        assert set(diags[0]) == {"t", "J", "K", "m2", "gap", "mass", "support_radius",
                                 "w1_step", "boundary_residual"}
        back = ParticleMeasure.from_csv(tmp_path / "particles_t3.csv")
        assert back.atoms.tobytes() == trajectory.sigmas[3].atoms.tobytes()
        b = FreeBoundary.from_csv(tmp_path / "boundary_t3.csv")
        assert np.array_equal(b.rho, trajectory.states[3].boundary.rho)


class TestDivergence:
    cfg = ModelConfig()
    box = (0.3, 1.5, 0.3, 1.5)

    def test_affine_potential(self):
        f = Forcing.default(self.cfg.M, self.cfg.g, self.cfg.r0)
        sur = QuadraticSurrogate(np.zeros((2, 2)), np.array([0.2, 0.3]), 0.0)
        Y, Z, fd, exact, mask = divergence_field(sur, self.cfg, AMB, f, self.box, 16)
        r = r_of_s(0.2)
        assert mask.all()
        assert np.allclose(exact, self.cfg.M * (1 - np.exp(-(r - 1))) / np.sqrt(Y), rtol=1e-12)
        assert np.allclose(fd, exact, rtol=1e-6)

    def test_zero_forcing(self):
        sur = QuadraticSurrogate(np.array([[0.1, 0.02], [0.02, 0.1]]), np.array([0.1, 0.1]))
        _, _, fd, _, mask = divergence_field(sur, self.cfg, AMB, Forcing.zero(), self.box, 16)
        assert np.all(fd[mask] == 0)

    def test_quadratic_default_forcing(self):
        f = Forcing.default(self.cfg.M, self.cfg.g, self.cfg.r0)
        sur = QuadraticSurrogate(np.array([[0.15, 0.05], [0.05, 0.12]]), np.array([0.02, 0.05]))
        assert divergence_check(sur, self.cfg, AMB, f, n=64, box=self.box) >= -1e-8
        _, _, fd, exact, mask = divergence_field(sur, self.cfg, AMB, f, self.box, 32)
        assert np.allclose(fd[mask], exact[mask], rtol=1e-5)

    def test_fit_recovers_quadratic(self, rng):
        A = np.array([[0.3, 0.1], [0.1, 0.2]])
        b = np.array([0.05, -0.02])
        q = rng.uniform(0.2, 2, (12, 2))
        psi = 0.5 * np.einsum("ni,ij,nj->n", q, A, q) + q @ b + 0.7
        sur = QuadraticSurrogate.fit(q, psi)
        assert np.allclose(sur.A, A) and np.allclose(sur.b, b) and math.isclose(sur.c, 0.7)
        assert np.allclose(sur(q), psi)

    def test_fit_clips_to_convex(self, rng):
        q = rng.uniform(0.2, 2, (12, 2))
        sur = QuadraticSurrogate.fit(q, -(q[:, 0] ** 2))
        assert np.all(np.linalg.eigvalsh(sur.A) >= -1e-15)

    def test_from_state(self, trajectory, dyn_cfg):
        f = Forcing.default(dyn_cfg.M, dyn_cfg.g, dyn_cfg.r0)
        assert divergence_check(trajectory.states[0], dyn_cfg, AMB, f) >= -1e-8
