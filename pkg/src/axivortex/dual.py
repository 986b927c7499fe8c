"""Dual problem: c-transforms, free boundary, objectives and the solver.

The potential P is never tabulated.  For a dual vector psi over the atoms it
is the finite maximum P(p, m) = max_i [c(p, m, q_i) - psi_i], evaluated on
demand, so the transport map is exactly the argmax atom.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .core import AmbientProfile, ModelConfig, cost_c, density, f0
from .measure import (FreeBoundary, ParticleMeasure, ReferenceMeasure,
                      build_reference_measure, f_pushforward, second_moment)
from .netflow import exact_discrete_ot, solve_transport
from .semidiscrete import RowGrid, envelope, moments, pole_cap, sweep

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the dual ascent does not converge; carries the last report."""

    def __init__(self, message: str, report: "SolveReport | None" = None,
                 state: "DualState | None" = None):
        super().__init__(message)
        self.report = report
        self.state = state


class EmptyCellError(ValueError):
    pass


# ----------------------------------------------------------------------------
# c-transforms

@dataclass(frozen=True)
class LazyP:
    """P(s, z, m) = max_i [s Y_i + z Z_i / m - psi_i] with m = theta0(z) by default."""

    atoms: np.ndarray
    psi: np.ndarray
    ambient: AmbientProfile

    def values(self, s, z, m=None) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        z = np.asarray(z, dtype=float)
        m = self.ambient.theta0(z) if m is None else np.asarray(m, dtype=float)
        p = np.stack(np.broadcast_arrays(s, z), axis=-1)
        aff = cost_c(p[..., None, :], np.asarray(m)[..., None], self.atoms) - self.psi
        return np.asarray(aff)

    def __call__(self, s, z, m=None):
        out = self.values(s, z, m).max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def argmax(self, s, z, m=None):
        out = self.values(s, z, m).argmax(axis=-1)
        return int(out) if np.ndim(out) == 0 else out

    def breakpoints(self, z, s_hi: float) -> list[float]:
        y = float(self.ambient.phi(z))
        pieces = envelope(self.atoms[:, 0], y * self.atoms[:, 1] - self.psi, s_hi)
        return [p[2] for p in pieces[:-1]]


def psi_c(psi, atoms, p, m):
    """Psi^c(p, m) = max_i [c(p, m, q_i) - psi_i] (exact finite maximum)."""
    atoms = np.asarray(atoms, dtype=float).reshape(-1, 2)
    psi = np.asarray(psi, dtype=float).ravel()
    if len(atoms) == 0:
        raise ValueError("empty atom set")
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    aff = cost_c(p[..., None, :], m[..., None], atoms) - psi
    out = np.max(aff, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def p_c(P_eval: Callable, q, grid_p: np.ndarray, grid_m: np.ndarray):
    """P_c(q) = max over grid points (p_k, m_k) of c(p_k, m_k, q) - P(p_k, m_k)."""
    grid_p = np.asarray(grid_p, dtype=float).reshape(-1, 2)
    grid_m = np.asarray(grid_m, dtype=float).ravel()
    Pv = np.asarray(P_eval(grid_p[:, 0], grid_p[:, 1], grid_m), dtype=float)
    q = np.asarray(q, dtype=float)
    cq = cost_c(grid_p[:, None, :], grid_m[:, None], q.reshape(-1, 2)[None, :, :])
    out = np.max(cq - Pv[:, None], axis=0)
    return float(out[0]) if q.ndim == 1 else out


def c_transform(direction: str, potential, point, *, atoms=None, m=None,
                grid_p=None, grid_m=None):
    """Dispatch: ``"psi->P"`` evaluates Psi^c at ``point``; ``"P->psi"`` evaluates P_c."""
    if direction == "psi->P":
        return psi_c(potential, atoms, point, m)
    if direction == "P->psi":
        return p_c(potential, point, grid_p, grid_m)
    raise ValueError(f"unknown direction {direction!r}")


# ----------------------------------------------------------------------------
# S functional and the free boundary

def _S_integrand(P_eval, z, cfg: ModelConfig):
    def fn(s):
        return (f0(s, cfg.r0, cfg.omega) - P_eval(s, z)) * density(s, cfg.r0, cfg.omega)
    return fn


def S_functional(P_eval: Callable, rho_bar: float, z: float, cfg: ModelConfig) -> float:
    """int_0^rho_bar (f0(s) - P(s, z)) (2 f0(s)/Omega^2)^2 ds by adaptive quadrature.

    ``P_eval(s, z)`` returns P(s, z, theta0(z)).  Kinks of a LazyP are passed
    to the integrator as breakpoints.
    """
    if rho_bar < 0 or rho_bar > pole_cap(cfg):
        raise ValueError(f"rho_bar={rho_bar} outside [0, {pole_cap(cfg)}]")
    if rho_bar == 0.0:
        return 0.0
    pts = None
    if hasattr(P_eval, "breakpoints"):
        pts = [x for x in P_eval.breakpoints(z, rho_bar) if 0 < x < rho_bar] or None
    val, _ = integrate.quad(_S_integrand(P_eval, z, cfg), 0.0, rho_bar, points=pts,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(val)


def S_derivative(P_eval: Callable, rho_bar: float, z: float, cfg: ModelConfig) -> float:
    """(f0(rho) - P(rho, z)) (2 f0(rho)/Omega^2)^2."""
    if rho_bar < 0 or rho_bar > pole_cap(cfg):
        raise ValueError(f"rho_bar={rho_bar} outside [0, {pole_cap(cfg)}]")
    return float(_S_integrand(P_eval, z, cfg)(rho_bar))


def minimize_S_z(P_eval: Callable, z: float, cfg: ModelConfig, n_scan: int = 512) -> float:
    """Global minimiser of S(., z): grid scan up to the pole cap, then refinement."""
    cap = pole_cap(cfg)
    grid = np.linspace(0.0, cap, n_scan)
    integrand = _S_integrand(P_eval, z, cfg)
    # cumulative S on the scan grid by 4-point Gauss-Legendre per interval
    xg, wg = np.polynomial.legendre.leggauss(4)
    lo, hi = grid[:-1], grid[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * xg[None, :]
    vals = np.array([integrand(x) for x in nodes.ravel()]).reshape(nodes.shape)
    S = np.concatenate([[0.0], np.cumsum(np.sum(vals * wg, axis=1) * half)])
    k = int(np.argmin(S))
    if k == 0 and S[1] >= 0.0 and integrand(0.0) >= 0.0:
        return 0.0
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, n_scan - 1)]
    ga, gb = integrand(a), integrand(b)
    if ga < 0.0 < gb:
        return float(optimize.brentq(integrand, a, b, xtol=1e-15, rtol=1e-15, maxiter=200))

    def S_at(x):
        return S_functional(P_eval, x, z, cfg)

    res = optimize.minimize_scalar(S_at, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12})
    best = float(res.x)
    return 0.0 if S_at(best) >= 0.0 and k == 0 else best


def monotone_project(values, weights=None, z_grid=None, H: float = 1.0,
                     r0: float = 1.0):
    """Least-squares nondecreasing fit by pool-adjacent-violators.

    Returns a FreeBoundary when ``z_grid`` is given, otherwise an array.
    """
    y = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    means, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            wsum = wts[-2] + wts[-1]
            mval = (wts[-2] * means[-2] + wts[-1] * means[-1]) / wsum
            size = sizes[-2] + sizes[-1]
            del means[-1], wts[-1], sizes[-1]
            means[-1], wts[-1], sizes[-1] = mval, wsum, size
    out = np.repeat(means, sizes)
    if z_grid is None:
        return out
    return FreeBoundary(np.asarray(z_grid, dtype=float), out, H, r0)


def monotone_violation(values) -> float:
    """Total size of the downward steps of a sequence."""
    d = np.diff(np.asarray(values, dtype=float))
    return float(np.sum(-d[d < 0]))


# ----------------------------------------------------------------------------
# objectives

def _grid(cfg: ModelConfig, ambient: AmbientProfile, n_z: int) -> RowGrid:
    return RowGrid(cfg, ambient, int(n_z))


def J_objective(sigma: ParticleMeasure, psi, cfg: ModelConfig, ambient: AmbientProfile,
                n_z: int = 512):
    """J = -sum w psi + int_0^H min_rho S(rho, z) dz (midpoint rule in z).

    Returns (J, rho_star, summary) with rho_star the per-row minimiser.
    """
    psi = np.asarray(psi, dtype=float)
    grid = _grid(cfg, ambient, n_z)
    sw = sweep(grid, sigma.ups, sigma.zed, psi)
    J = -float(sigma.weights @ psi) + grid.dz * float(np.sum(sw.S))
    summary = {"mass": sw.total, "cell_mass": sw.mass, "at_cap": sw.at_cap,
               "supergradient": sw.mass - sigma.weights}
    return J, sw.rho, summary


def _init_potential(sigma: ParticleMeasure, cfg: ModelConfig, ambient: AmbientProfile,
                    rho: np.ndarray, n_side: int | None = None) -> np.ndarray:
    """Dual vector of a coarse exact transport problem; every cell gets mass."""
    n = len(sigma)
    n_side = n_side or max(8, int(math.ceil(math.sqrt(6 * n))))
    z_c = (np.arange(n_side) + 0.5) * cfg.H / n_side
    rho_c = np.interp(z_c, (np.arange(len(rho)) + 0.5) * cfg.H / len(rho), rho)
    fb = FreeBoundary(z_c, rho_c, cfg.H, cfg.r0)
    ref = build_reference_measure(fb, cfg, n_side, scheme="rows")
    pts, w = f_pushforward(ref, ambient)
    w = w / w.sum()
    C = -(pts[:, 0:1] * sigma.ups[None, :] + pts[:, 1:2] * sigma.zed[None, :])
    res = solve_transport(C, w, sigma.weights * (w.sum() / sigma.weights.sum()))
    return -res.v


def _w2_dual(grid: RowGrid, sigma: ParticleMeasure, rho: np.ndarray, phi0: np.ndarray,
             tol: float = 1e-13, max_iter: int = 100):
    """min_phi  w.phi + int max_i(p.q_i - phi_i) d(nu/|nu|) by damped Newton."""
    w = sigma.weights

    def evaluate(phi):
        sw = sweep(grid, sigma.ups, sigma.zed, phi, rho=rho, hessian=True)
        tot = sw.total
        D = float(w @ phi) + sw.intP / tot
        grad = w - sw.mass / tot
        return D, grad, -sw.hess / tot, sw

    phi = np.asarray(phi0, dtype=float).copy()
    D, g, Hd, sw = evaluate(phi)
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            break
        d = -np.linalg.lstsq(Hd + 1e-14 * np.eye(len(g)), g, rcond=None)[0]
        d -= d.mean()
        if g @ d >= 0:
            d = -g
        t = 1.0
        while t > 1e-12:
            Dn, gn, Hn, swn = evaluate(phi + t * d)
            if Dn <= D + 1e-4 * t * (g @ d) or (
                    np.linalg.norm(gn) <= (1 - 0.5 * t) * np.linalg.norm(g)
                    and Dn <= D + 1e-13 * (1 + abs(D))):
                break
            t *= 0.5
        else:
            break
        phi = phi + t * d
        D, g, Hd, sw = Dn, gn, Hn, swn
    return D, phi, sw


def K_objective(sigma: ParticleMeasure, boundary: FreeBoundary, cfg: ModelConfig,
                ambient: AmbientProfile, method: str = "semidiscrete",
                n_s: int = 16, phi0=None, mass_tol: float = 1e-3) -> float:
    """K = W2^2(sigma, f#mu)/2 + int (f0 - (s^2 + phi(z)^2)/2) dmu.

    Returns +inf when the mass of mu_rho misses 1 by more than ``mass_tol``.
    ``semidiscrete`` integrates each row exactly and computes the transport
    term through its dual; ``discrete`` pushes a quadrature cloud forward and
    solves the exact transportation problem.
    """
    grid = _grid(cfg, ambient, boundary.n_z)
    total = boundary.exact_mass(cfg)
    if not abs(total - 1.0) <= mass_tol:
        return math.inf
    m2 = second_moment(sigma)
    if method == "semidiscrete":
        if phi0 is None:
            phi0 = _init_potential(sigma, cfg, ambient, boundary.rho)
        D, _, sw = _w2_dual(grid, sigma, boundary.rho, phi0)
        return sw.intF / sw.total + m2 - D
    if method == "discrete":
        ref = build_reference_measure(boundary, cfg, n_s, scheme="rows")
        pts, w = f_pushforward(ref, ambient)
        w = w / w.sum()
        s = pts[:, 0]
        e = np.asarray(f0(s, cfg.r0, cfg.omega)) - 0.5 * (s**2 + pts[:, 1] ** 2)
        # transport from at most n_s x n_s barycenters: rows are pooled into
        # n_s slabs, keeping the position of each node within its row
        if boundary.n_z > n_s:
            slab = np.minimum((ref.nodes[:, 1] / cfg.H * n_s).astype(int), n_s - 1)
            rank = np.arange(len(w)) % n_s  # every non-empty row holds n_s nodes
            _, lab = np.unique(slab * n_s + rank, return_inverse=True)
            W = np.bincount(lab, w)
            X = np.column_stack([np.bincount(lab, w * pts[:, 0]),
                                 np.bincount(lab, w * pts[:, 1])]) / W[:, None]
        else:
            X, W = pts, w
        ot = exact_discrete_ot(X, W, sigma.atoms, sigma.weights * (W.sum() / sigma.weights.sum()))
        return ot.value + float(w @ e)
    raise ValueError(f"unknown method {method!r}")


# ----------------------------------------------------------------------------
# state and solver

@dataclass
class SolveReport:
    J: float
    K: float
    m2: float
    gap: float
    boundary_residual: float
    iterations: int
    converged: bool
    max_mass_error: float = math.nan

    def to_dict(self) -> dict:
        return {"J": self.J, "K": self.K, "m2": self.m2, "gap": self.gap,
                "boundary_residual": self.boundary_residual,
                "iterations": self.iterations, "converged": self.converged}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class SolverOptions:
    n_z: int = 512
    method: str = "newton"        # or "gradient"
    tol_mass: float = 1e-11
    tol_rho: float = 1e-9
    tol_gap: float = 1e-7
    max_iter: int = 300


@dataclass
class DualState:
    sigma: ParticleMeasure
    psi: np.ndarray
    boundary: FreeBoundary
    rho_raw: np.ndarray
    cfg: ModelConfig
    ambient: AmbientProfile
    n_z: int
    J: float = math.nan
    _sweep: object = field(default=None, repr=False)

    @property
    def grid(self) -> RowGrid:
        return _grid(self.cfg, self.ambient, self.n_z)

    @property
    def P(self) -> LazyP:
        return LazyP(self.sigma.atoms, self.psi, self.ambient)

    @cached_property
    def fixed_sweep(self):
        """Integrals over the (projected) boundary with the state's potential."""
        return sweep(self.grid, self.sigma.ups, self.sigma.zed, self.psi, rho=self.boundary.rho)

    @property
    def cell_mass(self) -> np.ndarray:
        return self.fixed_sweep.mass

    @property
    def barycenters(self):
        return barycenter_selection(self)

    def assignment(self, ref: ReferenceMeasure) -> np.ndarray:
        return cell_assign(self, ref.nodes)


def cell_assign(state: DualState, p) -> np.ndarray | int:
    """Argmax atom of c(p, theta0(z), q_i) - psi_i; lowest index on ties."""
    p = np.asarray(p, dtype=float)
    return state.P.argmax(p[..., 0], p[..., 1])


def T_map(state: DualState, p) -> np.ndarray:
    return state.sigma.atoms[cell_assign(state, p)]


def cell_masses(state: DualState, ref: ReferenceMeasure | None = None) -> np.ndarray:
    """Mass of mu_rho in every cell.

    Row-exact by default; with ``ref`` the node weights are summed instead.
    """
    if ref is None:
        return state.cell_mass.copy()
    idx = cell_assign(state, ref.nodes)
    out = np.zeros(len(state.sigma))
    np.add.at(out, idx, ref.weights)
    return out


def barycenter_selection(state: DualState):
    """Per-atom (s_bar, z_bar): mu-weighted mean of s and phi^{-1} of the mean of phi."""
    sw = state.fixed_sweep
    empty = np.flatnonzero(sw.mass <= 0)
    if len(empty):
        raise EmptyCellError(f"empty cell for atom(s) {empty.tolist()}")
    s_bar = sw.m1 / sw.mass
    y_bar = sw.my / sw.mass
    y_lo, y_hi = state.ambient.phi(0.0), state.ambient.phi(state.cfg.H)
    z_bar = np.asarray(state.ambient.phi_inv(np.clip(y_bar, y_lo, y_hi)))
    return s_bar, z_bar


def boundary_residual(state: DualState, threshold: float = 1e-3) -> float:
    """max |2 (1 - 2 r0^2 rho) P(rho, z) - r0^2 Omega^2| over rows with rho > threshold."""
    rho = state.boundary.rho
    z = state.boundary.z_grid
    mask = rho > threshold
    if not mask.any():
        return 0.0
    a = state.cfg.r0**2
    P = state.P(rho[mask], z[mask])
    return float(np.max(np.abs(2.0 * (1.0 - 2.0 * a * rho[mask]) * P - a * state.cfg.omega**2)))


def duality_gap(sigma: ParticleMeasure, state: DualState, method: str = "semidiscrete") -> float:
    K = K_objective(sigma, state.boundary, state.cfg, state.ambient, method=method,
                    phi0=state.psi)
    J, _, _ = J_objective(sigma, state.psi, state.cfg, state.ambient, state.n_z)
    return K - J - second_moment(sigma)


def _shift_to_unit_mass(grid, sigma, psi):
    """Constant shift making mu_{rho*} a probability measure (mass decreases with the shift)."""

    def excess(k):
        return sweep(grid, sigma.ups, sigma.zed, psi + k).total - 1.0

    lo, hi = -1.0, 1.0
    while excess(lo) < 0:
        lo *= 2.0
    while excess(hi) > 0:
        hi *= 2.0
    k = optimize.brentq(excess, lo, hi, xtol=1e-13)
    return psi + k


def solve_dual(sigma: ParticleMeasure, cfg: ModelConfig, ambient: AmbientProfile,
               opts: SolverOptions | None = None, psi0=None):
    """Maximise J over psi; returns (DualState, SolveReport).

    Newton steps use the exact derivative of the cell masses (interfaces
    between cells plus the moving boundary), damped by backtracking; the
    ``gradient`` method takes supergradient steps psi += eta (mass - w), with
    eta = 1/max w first and Barzilai-Borwein lengths afterwards.
    """
    opts = opts or SolverOptions()
    grid = _grid(cfg, ambient, opts.n_z)
    w = sigma.weights
    ups, zed = sigma.ups, sigma.zed
    m2 = second_moment(sigma)

    if psi0 is None:
        a = cfg.r0**2
        rho_bar = 1.0 / (a * a * cfg.H + 2.0 * a)
        psi = _init_potential(sigma, cfg, ambient, np.full(8, rho_bar))
        psi = _shift_to_unit_mass(grid, sigma, psi)
    else:
        psi = np.asarray(psi0, dtype=float).copy()

    def evaluate(p):
        sw = sweep(grid, ups, zed, p, hessian=(opts.method == "newton"))
        J = -float(w @ p) + grid.dz * float(np.sum(sw.S))
        return J, sw.mass - w, sw

    J, g, sw = evaluate(psi)
    rho_prev = sw.rho.copy()
    # a warm start that already balances the masses is accepted as is
    d_rho = 0.0 if psi0 is not None else math.inf
    report = None
    prev = None
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.max(np.abs(g)) <= opts.tol_mass and d_rho <= opts.tol_rho:
            state = _make_state(sigma, psi, sw, cfg, ambient, opts.n_z, J)
            report = _report(state, J, m2, it - 1, True)
            if report.gap <= opts.tol_gap * (1 + abs(report.K)):
                return state, report
        if opts.method == "newton":
            Hn = -sw.hess
            lam = 1e-13 * max(1.0, float(np.trace(Hn)))
            try:
                d = np.linalg.solve(Hn + lam * np.eye(len(g)), g)
            except np.linalg.LinAlgError:
                d = g / np.max(w)
            if not g @ d > 0:
                d = g / np.max(w)
        elif prev is None:
            d = g / np.max(w)
        else:
            # Barzilai-Borwein step length from the last accepted move
            dp, dg = psi - prev[0], g - prev[1]
            curv = -float(dp @ dg)
            eta = float(dp @ dp) / curv if curv > 0 else 1.0 / np.max(w)
            d = min(max(eta, 1e-3 / np.max(w)), 1e3 / np.max(w)) * g
        t = 1.0
        accepted = False
        while t > 1e-14:
            Jn, gn, swn = evaluate(psi + t * d)
            if Jn >= J + 1e-4 * t * (g @ d) or (
                    np.linalg.norm(gn) <= (1 - 0.5 * t) * np.linalg.norm(g)
                    and Jn >= J - 1e-13 * (1 + abs(J))):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no measurable progress left in double precision
            d_rho = 0.0
            if np.max(np.abs(g)) <= max(opts.tol_mass, 1e-9):
                state = _make_state(sigma, psi, sw, cfg, ambient, opts.n_z, J)
                report = _report(state, J, m2, it, True)
                report.converged = report.gap <= max(opts.tol_gap * (1 + abs(report.K)), 1e-9)
                if report.converged:
                    return state, report
            break
        prev = (psi, g)
        psi = psi + t * d
        J, g, sw = Jn, gn, swn
        d_rho = float(np.max(np.abs(sw.rho - rho_prev)))
        rho_prev = sw.rho.copy()
        log.debug("iter %d J=%.15g |g|=%.3e t=%.3g drho=%.2e", it, J, np.max(np.abs(g)), t, d_rho)

    state = _make_state(sigma, psi, sw, cfg, ambient, opts.n_z, J)
    report = _report(state, J, m2, it, False)
    raise SolverError(f"dual ascent did not converge in {it} iterations "
                      f"(max mass error {report.max_mass_error:.3e}, gap {report.gap:.3e})",
                      report, state)


def _make_state(sigma, psi, sw, cfg, ambient, n_z, J) -> DualState:
    rho_raw = sw.rho.copy()
    z = (np.arange(n_z) + 0.5) * cfg.H / n_z
    boundary = monotone_project(rho_raw, z_grid=z, H=cfg.H, r0=cfg.r0)
    return DualState(sigma, np.asarray(psi, dtype=float).copy(), boundary, rho_raw,
                     cfg, ambient, n_z, J)


def _report(state: DualState, J: float, m2: float, iterations: int, converged: bool) -> SolveReport:
    K = K_objective(state.sigma, state.boundary, state.cfg, state.ambient, phi0=state.psi)
    gap = K - J - m2
    err = float(np.max(np.abs(state.cell_mass - state.sigma.weights)))
    return SolveReport(J, K, m2, gap, boundary_residual(state), iterations, converged, err)
