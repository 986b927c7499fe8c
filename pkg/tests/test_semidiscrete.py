import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from axivortex.core import AmbientProfile, ModelConfig, density, f0
from axivortex.dual import LazyP, S_functional, minimize_S_z
from axivortex.measure import FreeBoundary, ParticleMeasure, build_reference_measure
from axivortex.semidiscrete import RowGrid, envelope, moments, pole_cap, sweep

CFG = ModelConfig()
AMB = AmbientProfile.power_law()


@settings(max_examples=60)
@given(st.floats(0.3, 2.0), st.floats(0.0, 0.999), st.floats(0.5, 2.0))
def test_moments_against_quadrature(r0, frac, om):
    a = r0 * r0
    s = frac * 0.5 / a
    m0, m1, m2, mf = moments(s, a, om)
    kw = dict(epsabs=0, epsrel=1e-12, limit=200)
    rho = lambda x: density(x, r0, om)  # noqa: E731
    ref = [integrate.quad(lambda x: rho(x) * x**k, 0, s, **kw)[0] for k in range(3)]
    ref.append(integrate.quad(lambda x: rho(x) * f0(x, r0, om), 0, s, **kw)[0])
    for got, want in zip((m0, m1, m2, mf), ref):
        assert abs(got - want) <= 1e-10 * max(abs(want), 1e-300) + 1e-300


def test_series_switch_is_continuous():
    a = 1.0
    x = np.array([0.1 * (1 - 1e-14), 0.1 * (1 + 1e-14)])
    s = x / (2 * a)
    _, m1, m2, _ = moments(s, a, 1.0)
    assert abs(m1[1] - m1[0]) <= 1e-13 * abs(m1[0])
    assert abs(m2[1] - m2[0]) <= 1e-12 * abs(m2[0])


@settings(max_examples=80)
@given(st.lists(st.tuples(st.floats(0.0, 3.0), st.floats(-2.0, 2.0)), min_size=1, max_size=8),
       st.floats(0.01, 1.0))
def test_envelope_is_upper_envelope(lines, s_hi):
    ups = [u for u, _ in lines]
    b = [c for _, c in lines]
    pieces = envelope(ups, b, s_hi)
    assert pieces[0][1] == 0.0 and pieces[-1][2] == s_hi
    for (_, _, e1), (_, s2, _) in zip(pieces[:-1], pieces[1:]):
        assert e1 == s2
    U, B = np.array(ups), np.array(b)
    for i, lo, hi in pieces:
        for s in np.linspace(lo, hi, 5):
            best = np.max(U * s + B)
            assert U[i] * s + B[i] >= best - 1e-9 * (1 + abs(best))


@pytest.fixture(scope="module")
def instance():
    rng = np.random.default_rng(5)
    q = np.column_stack([rng.uniform(0.3, 1.8, 6), rng.uniform(0.5, 1.5, 6)])
    sig = ParticleMeasure.create(q)
    psi = rng.uniform(-0.2, 0.2, 6) + 0.2
    return sig, psi


def test_fixed_mode_masses_match_fine_quadrature(instance):
    sig, psi = instance
    n_z = 64
    grid = RowGrid(CFG, AMB, n_z)
    b = FreeBoundary.from_function(lambda z: 0.25 + 0.05 * z, n_z)
    sw = sweep(grid, sig.ups, sig.zed, psi, rho=b.rho)
    ref = build_reference_measure(b, CFG, 4000, scheme="rows")
    P = LazyP(sig.atoms, psi, AMB)
    idx = P.argmax(ref.nodes[:, 0], ref.nodes[:, 1])
    mass = np.bincount(idx, ref.weights, len(sig))
    assert np.allclose(sw.mass, mass, atol=2e-4)
    assert abs(sw.total - b.exact_mass(CFG)) <= 1e-13
    assert abs(sw.mass.sum() - sw.total) <= 1e-13


def test_free_mode_matches_scan_minimiser(instance):
    sig, psi = instance
    grid = RowGrid(CFG, AMB, 16)
    sw = sweep(grid, sig.ups, sig.zed, psi)
    P = LazyP(sig.atoms, psi, AMB)
    for j in (0, 5, 11, 15):
        z = grid.z[j]
        assert abs(sw.rho[j] - minimize_S_z(P, z, CFG)) <= 1e-9
        assert abs(sw.S[j] - S_functional(P, sw.rho[j], z, CFG)) <= 1e-10
    assert np.all(sw.rho <= pole_cap(CFG))


def test_empty_rows():
    sig = ParticleMeasure.create([[0.5, 0.5]])
    grid = RowGrid(CFG, AMB, 8)
    # a very large potential makes P < f0 everywhere, so every row is empty
    sw = sweep(grid, sig.ups, sig.zed, np.array([10.0]))
    assert np.all(sw.rho == 0.0) and sw.total == 0.0 and sw.mass[0] == 0.0
