"""Cross-checks of the numerical engine against independent computations.

Every check returns a record {"name", "passed", "value", "tol", "detail"}.
The exact transportation solver is compared with a linear-programming
solve and with brute force over permutations; the dual solver's derivatives
are compared with finite differences; the converged state is compared with
an exact discrete transport problem on a quantised reference measure.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import optimize

from .core import AmbientProfile, ModelConfig, f0
from .dual import (DualState, J_objective, K_objective, S_derivative, S_functional,
                   cell_assign, solve_dual)
from .measure import ParticleMeasure, build_reference_measure, f_pushforward, second_moment
from .netflow import exact_discrete_ot, ground_cost, solve_transport
from .semidiscrete import pole_cap, sweep


def _record(name, value, tol, passed=None, detail=""):
    value = float(value)
    ok = bool(value <= tol) if passed is None else bool(passed)
    return {"name": name, "passed": ok, "value": value, "tol": float(tol), "detail": detail}


def check_ot_linprog(rng, n=6, m=7):
    C = rng.uniform(0, 1, (n, m))
    a = rng.uniform(0.5, 1.5, n)
    b = rng.uniform(0.5, 1.5, m)
    a /= a.sum()
    b *= a.sum() / b.sum()
    res = solve_transport(C, a, b)
    A_eq = np.vstack([np.kron(np.eye(n), np.ones(m)), np.kron(np.ones(n), np.eye(m))])
    lp = optimize.linprog(C.ravel(), A_eq=A_eq, b_eq=np.r_[a, b], bounds=(0, None),
                          method="highs")
    return _record("ot_vs_linprog", abs(res.value - lp.fun), 1e-9,
                   detail=f"value {res.value:.15g}, lp {lp.fun:.15g}")


def check_ot_permutation(rng, n=5):
    x = rng.uniform(0, 2, (n, 2))
    y = rng.uniform(0, 2, (n, 2))
    w = np.full(n, 1.0 / n)
    res = exact_discrete_ot(x, w, y, w)
    C = ground_cost(x, y)
    best = min(sum(C[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))
    return _record("ot_vs_permutations", abs(res.value - best), 1e-12,
                   detail=f"value {res.value:.15g}, brute force {best:.15g}")


def check_ot_duality(rng, n=9, m=6):
    x = rng.uniform(0, 2, (n, 2))
    y = rng.uniform(0, 2, (m, 2))
    a = rng.uniform(0.5, 1.5, n)
    b = rng.uniform(0.5, 1.5, m)
    a /= a.sum()
    b *= a.sum() / b.sum()
    res = exact_discrete_ot(x, a, y, b)
    C = ground_cost(x, y)
    feas = float(np.max(res.u[:, None] + res.v[None, :] - C))
    marg = float(max(np.max(np.abs(res.plan.sum(1) - a)), np.max(np.abs(res.plan.sum(0) - b))))
    err = max(abs(res.value - res.dual_value), feas, marg)
    return _record("ot_strong_duality", err, 1e-10,
                   detail=f"primal-dual {res.value - res.dual_value:.2e}, "
                          f"dual infeasibility {feas:.2e}, marginal error {marg:.2e}")


def check_S_derivative(state: DualState, rng, n=20, rtol=1e-6):
    cfg = state.cfg
    P = state.P
    cap = pole_cap(cfg)
    worst = 0.0
    for _ in range(n):
        rb = rng.uniform(0.05, 0.9) * cap
        z = rng.uniform(0.05, 0.95) * cfg.H
        h = 1e-5 * cap
        if any(abs(x - rb) < 3 * h for x in P.breakpoints(z, cap)):
            rb += 6 * h  # keep the stencil off the kinks of P
        Sx = [S_functional(P, rb + k * h, z, cfg) for k in (-2, -1, 1, 2)]
        fd = (8 * (Sx[2] - Sx[1]) - (Sx[3] - Sx[0])) / (12 * h)
        ex = S_derivative(P, rb, z, cfg)
        worst = max(worst, abs(fd - ex) / max(abs(ex), 1e-12))
    return _record("S_derivative_fd", worst, rtol, detail=f"{n} random (rho, z) pairs")


def check_supergradient(state: DualState, rng, n=5, atol=1e-3, eps=1e-5):
    sig, cfg, amb = state.sigma, state.cfg, state.ambient
    idx = rng.choice(len(sig), size=min(n, len(sig)), replace=False)
    _, _, summ = J_objective(sig, state.psi, cfg, amb, state.n_z)
    g = summ["supergradient"]
    worst = 0.0
    for i in idx:
        e = np.zeros(len(sig))
        e[i] = eps
        Jp = J_objective(sig, state.psi + e, cfg, amb, state.n_z)[0]
        Jm = J_objective(sig, state.psi - e, cfg, amb, state.n_z)[0]
        worst = max(worst, abs((Jp - Jm) / (2 * eps) - g[i]))
    return _record("supergradient_fd", worst, atol, detail=f"atoms {sorted(idx.tolist())}")


def check_hessian(state: DualState, eps=1e-8, rtol=1e-3):
    sig = state.sigma
    grid = state.grid
    sw = sweep(grid, sig.ups, sig.zed, state.psi, hessian=True)
    H = sw.hess
    fd = np.zeros_like(H)
    for i in range(len(sig)):
        e = np.zeros(len(sig))
        e[i] = eps
        mp = sweep(grid, sig.ups, sig.zed, state.psi + e).mass
        mm = sweep(grid, sig.ups, sig.zed, state.psi - e).mass
        fd[:, i] = (mp - mm) / (2 * eps)
    err = float(np.max(np.abs(fd - H)) / max(np.max(np.abs(H)), 1e-300))
    return _record("mass_jacobian_fd", err, rtol)


def check_weak_duality(state: DualState, rng, n=5, scale=0.05):
    sig, cfg, amb = state.sigma, state.cfg, state.ambient
    K = K_objective(sig, state.boundary, cfg, amb, phi0=state.psi)
    m2 = second_moment(sig)
    worst = -math.inf
    for _ in range(n):
        psi = state.psi + scale * rng.standard_normal(len(sig))
        J = J_objective(sig, psi, cfg, amb, state.n_z)[0]
        worst = max(worst, J + m2 - K)
    return _record("weak_duality", worst, 1e-9, detail="max of J(psi) + m2 - K over perturbed psi")


def check_gap(state: DualState):
    sig, cfg, amb = state.sigma, state.cfg, state.ambient
    K = K_objective(sig, state.boundary, cfg, amb, phi0=state.psi)
    gap = K - state.J - second_moment(sig)
    return _record("duality_gap", abs(gap), 1e-6 * (1 + abs(K)), detail=f"gap {gap:.3e}")


def quantised_transport(state: DualState, max_atoms: int = 64, n_s: int = 64):
    """Exact transport between a cell-adapted quantisation of f#mu and sigma.

    mu is cut into horizontal slabs and every slab into its cells; each
    piece is represented by its barycenter in (s, phi(z)), so at most
    ``max_atoms`` pieces are used.  Returns (OT value, piece points,
    agreement) where agreement is the fraction of transported mass sent to
    the atom whose cell contains the piece.
    """
    cfg = state.cfg
    n = len(state.sigma)
    n_slab = max(1, max_atoms // n)
    fine = build_reference_measure(state.boundary, cfg, n_s, scheme="rows")
    pts, w = f_pushforward(fine, state.ambient)
    slab = np.minimum((fine.nodes[:, 1] / cfg.H * n_slab).astype(int), n_slab - 1)
    cells = np.asarray(cell_assign(state, fine.nodes))
    uniq, lab = np.unique(cells * n_slab + slab, return_inverse=True)
    W = np.bincount(lab, w)
    X = np.column_stack([np.bincount(lab, w * pts[:, 0]),
                         np.bincount(lab, w * pts[:, 1])]) / W[:, None]
    W = W / W.sum()
    sig = state.sigma
    ot = exact_discrete_ot(X, W, sig.atoms, sig.weights)
    owner = uniq // n_slab
    agree = float(ot.plan[np.arange(len(uniq)), owner].sum())
    return ot.value, X, agree


def check_quantised_transport(state: DualState, rel=0.02, agreement=0.95):
    sig, cfg, amb = state.sigma, state.cfg, state.ambient
    value, X, agree = quantised_transport(state)
    # the converged decomposition: K = W2^2/2 + int (f0 - |f|^2/2) dmu
    K = K_objective(sig, state.boundary, cfg, amb, phi0=state.psi)
    fine = build_reference_measure(state.boundary, cfg, 64, scheme="rows")
    pts, w = f_pushforward(fine, amb)
    e = float(w @ (np.asarray(f0(pts[:, 0], cfg.r0, cfg.omega)) - 0.5 * np.sum(pts**2, 1)) / w.sum())
    implied = K - e
    err = abs(value - implied) / abs(implied)
    return [_record("quantised_w2", err, rel,
                    detail=f"{len(X)} atoms, OT {value:.6g}, implied {implied:.6g}"),
            _record("quantised_assignment", agree, agreement, passed=agree >= agreement,
                    detail="fraction of transported mass agreeing with cell_assign")]


def run_oracle_suite(sigma: ParticleMeasure, cfg: ModelConfig, ambient: AmbientProfile,
                     seed: int = 0, opts=None, state: DualState | None = None) -> dict:
    """Run every check; returns {"passed": bool, "checks": [...]}."""
    rng = np.random.default_rng(seed)
    checks = [check_ot_linprog(rng), check_ot_permutation(rng), check_ot_duality(rng)]
    if state is None:
        state, _ = solve_dual(sigma, cfg, ambient, opts)
    checks += [check_S_derivative(state, rng), check_supergradient(state, rng),
               check_hessian(state), check_weak_duality(state, rng), check_gap(state)]
    checks += check_quantised_transport(state)
    return {"passed": all(c["passed"] for c in checks), "seed": seed, "checks": checks}
