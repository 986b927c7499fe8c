"""Particle transport of sigma by the dual-space velocity field."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AmbientProfile, Forcing, ModelConfig, f0_prime, r_of_s
from .dual import DualState, SolverError, SolverOptions, barycenter_selection, solve_dual
from .measure import ParticleMeasure, support_radius
from .netflow import w1_distance

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    """Theorem precondition or initial support condition violated."""


class SupportBoundError(RuntimeError):
    """A velocity, step or support bound was exceeded; ``trajectory`` holds the steps so far."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


class ModelBreakdown(RuntimeError):
    """An atom left the open quadrant."""

    def __init__(self, msg, trajectory=None):
        super().__init__(msg)
        self.trajectory = trajectory


def velocity(state: DualState, t: float, forcing: Forcing) -> np.ndarray:
    """V_i = (2 sqrt(Y_i) F0(t, r(s_bar_i), z_bar_i), g F1(t, r(s_bar_i), z_bar_i))."""
    cfg = state.cfg
    s_bar, z_bar = barycenter_selection(state)
    r = np.asarray(r_of_s(s_bar, cfg.r0, cfg.omega))
    F0 = np.asarray(forcing.F0(t, r, z_bar), dtype=float) * np.ones(len(r))
    F1 = np.asarray(forcing.F1(t, r, z_bar), dtype=float) * np.ones(len(r))
    ups = state.sigma.ups
    return np.column_stack([2.0 * np.sqrt(ups) * F0, cfg.g * F1])


def euler_step(sigma: ParticleMeasure, V, tau: float) -> ParticleMeasure:
    """q_i' = q_i + tau V_i with the weight vector untouched."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    new = sigma.atoms + tau * np.asarray(V, dtype=float)
    if np.any(new <= 0):
        bad = np.flatnonzero(np.any(new <= 0, axis=1)).tolist()
        raise ModelBreakdown(f"atoms {bad} left the open quadrant")
    return sigma.with_atoms(new)


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    sigmas: list[ParticleMeasure] = field(default_factory=list)
    states: list[DualState] = field(default_factory=list)
    velocities: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sigmas)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, sig in enumerate(self.sigmas):
            p = out / f"particles_t{k}.csv"
            sig.to_csv(p)
            paths.append(p)
        for k, st in enumerate(self.states):
            p = out / f"boundary_t{k}.csv"
            st.boundary.to_csv(p, st.cfg)
            paths.append(p)
        p = out / "diagnostics.json"
        with open(p, "w") as fh:
            json.dump(self.diagnostics, fh, indent=2)
            fh.write("\n")
        paths.append(p)
        return paths


def simulate(sigma0: ParticleMeasure, cfg: ModelConfig, ambient: AmbientProfile,
             forcing: Forcing, opts: SolverOptions | None = None,
             check_bounds: bool = True) -> Trajectory:
    """N explicit Euler steps of size T/N with the dual problem re-solved each step.

    The dual state is also solved at the final time so every stored sigma has
    its boundary.  Raises PreconditionError before stepping, SolverError (with
    the partial trajectory attached) or SupportBoundError during the run.
    """
    if not cfg.theorem_precondition():
        raise PreconditionError(
            f"exp(4MT)(4 l0 + 1) = {math.exp(4 * cfg.M * cfg.T) * (4 * cfg.l0 + 1):.6g}"
            f" is not < l + 1 = {cfg.l + 1:.6g}")
    rad0 = support_radius(sigma0)
    if rad0 > cfg.l0 * (1 + 1e-12):
        raise PreconditionError(f"initial support radius {rad0:.6g} exceeds l0={cfg.l0}")
    tau = cfg.tau
    C0 = cfg.velocity_bound()
    traj = Trajectory()
    sigma = sigma0
    psi = None
    for k in range(cfg.N + 1):
        t = k * tau
        try:
            state, rep = solve_dual(sigma, cfg, ambient, opts, psi0=psi)
        except SolverError as exc:
            exc.trajectory = traj
            raise
        psi = state.psi
        rad = support_radius(sigma)
        diag = {"t": t, "J": rep.J, "K": rep.K, "m2": rep.m2, "gap": rep.gap,
                "mass": float(np.sum(sigma.weights)), "support_radius": rad,
                "w1_step": None, "boundary_residual": rep.boundary_residual}
        traj.times.append(t)
        traj.sigmas.append(sigma)
        traj.states.append(state)
        traj.diagnostics.append(diag)
        if check_bounds and rad > cfg.support_growth_bound(t) + 1e-9:
            raise SupportBoundError(f"step {k}: support radius {rad} exceeds bound "
                                    f"{cfg.support_growth_bound(t)}", traj)
        if k == cfg.N:
            break
        V = velocity(state, t, forcing)
        vmax = float(np.max(np.hypot(V[:, 0], V[:, 1])))
        if check_bounds and vmax > cfg.velocity_bound(rad) * (1 + 1e-12):
            raise SupportBoundError(f"step {k}: |V| = {vmax} exceeds M sqrt(4 l_k + 1)", traj)
        traj.velocities.append(V)
        try:
            new = euler_step(sigma, V, tau)
        except ModelBreakdown as exc:
            exc.trajectory = traj
            raise
        w1 = w1_distance(sigma.atoms, sigma.weights, new.atoms, new.weights)
        diag["w1_step"] = w1
        if check_bounds and w1 > C0 * tau:
            raise SupportBoundError(f"step {k}: W1 step {w1} exceeds C0(l) tau = {C0 * tau}", traj)
        log.info("step %d t=%.4f gap=%.2e radius=%.4f w1=%.3e", k, t, rep.gap, rad, w1)
        sigma = new
    return traj


# ----------------------------------------------------------------------------
# divergence of the velocity field for a smooth convex potential

@dataclass(frozen=True)
class QuadraticSurrogate:
    """Psi_s(q) = q.A.q/2 + b.q + c with A positive semidefinite."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    @classmethod
    def fit(cls, atoms, psi) -> "QuadraticSurrogate":
        """Least-squares paraboloid through (q_i, psi_i), curvature clipped to PSD."""
        q = np.asarray(atoms, dtype=float)
        psi = np.asarray(psi, dtype=float)
        Y, Z = q[:, 0], q[:, 1]
        X = np.column_stack([0.5 * Y**2, Y * Z, 0.5 * Z**2, Y, Z, np.ones_like(Y)])
        coef = np.linalg.lstsq(X, psi, rcond=None)[0]
        A = np.array([[coef[0], coef[1]], [coef[1], coef[2]]])
        lam, U = np.linalg.eigh(A)
        A = (U * np.maximum(lam, 0.0)) @ U.T
        resid = psi - 0.5 * np.einsum("ni,ij,nj->n", q, A, q)
        lin = np.linalg.lstsq(np.column_stack([Y, Z, np.ones_like(Y)]), resid, rcond=None)[0]
        return cls(A, lin[:2], float(lin[2]))

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", q, self.A, q) + q @ self.b + self.c

    def grad(self, q):
        return np.asarray(q, dtype=float) @ self.A.T + self.b


def _velocity_of_gradient(grad, ups, t, cfg, ambient, forcing):
    s = grad[..., 0]
    z = ambient.phi_inv(grad[..., 1])
    r = r_of_s(s, cfg.r0, cfg.omega)
    V0 = 2.0 * np.sqrt(ups) * forcing.F0(t, r, z)
    V1 = cfg.g * forcing.F1(t, r, z)
    return V0, V1


def divergence_field(surrogate: QuadraticSurrogate, cfg: ModelConfig, ambient: AmbientProfile,
                     forcing: Forcing, box, n: int = 64, t: float = 0.0, h: float | None = None):
    """Central-difference divergence of V[Psi_s] on an n x n grid inside ``box``.

    ``box`` = (Y_lo, Y_hi, Z_lo, Z_hi).  Returns (Y, Z, div_fd, div_exact, mask)
    where ``mask`` marks points whose whole stencil has gradient inside W.
    """
    Y_lo, Y_hi, Z_lo, Z_hi = box
    Yg = np.linspace(Y_lo, Y_hi, n)
    Zg = np.linspace(Z_lo, Z_hi, n)
    Y, Z = np.meshgrid(Yg, Zg, indexing="ij")
    h = h or 1e-4 * max(Y_hi - Y_lo, Z_hi - Z_lo)
    s_hi = cfg.s_max * (1 - 1e-3)
    y_lo, y_hi = ambient.phi(0.0), ambient.phi(cfg.H)

    def inside(g):
        return (g[..., 0] > 0) & (g[..., 0] < s_hi) & (g[..., 1] > y_lo) & (g[..., 1] < y_hi)

    mask = np.ones(Y.shape, bool)
    vals = {}
    for key, (dY, dZ) in {"e": (h, 0), "w": (-h, 0), "n": (0, h), "s": (0, -h), "c": (0, 0)}.items():
        q = np.stack([Y + dY, Z + dZ], axis=-1)
        g = surrogate.grad(q)
        ok = inside(g) & (q[..., 0] > 0)
        mask &= ok
        g = np.where(ok[..., None], g, surrogate.grad(np.stack([np.full_like(Y, 0.5 * (Y_lo + Y_hi)),
                                                                np.full_like(Z, 0.5 * (Z_lo + Z_hi))], -1)))
        vals[key] = _velocity_of_gradient(g, np.maximum(q[..., 0], 1e-300), t, cfg, ambient, forcing)
    div_fd = (vals["e"][0] - vals["w"][0]) / (2 * h) + (vals["n"][1] - vals["s"][1]) / (2 * h)

    # closed form: F0/sqrt(Y) + 2 sqrt(Y) dF0/dr r'(s) Psi_YY + g dF1/dz (phi^-1)'(y) Psi_ZZ
    q = np.stack([Y, Z], axis=-1)
    g = surrogate.grad(q)
    s = np.clip(g[..., 0], 0.0, s_hi)
    yv = np.clip(g[..., 1], y_lo, y_hi)
    z = ambient.phi_inv(yv)
    r = r_of_s(s, cfg.r0, cfg.omega)
    drds = f0_prime(s, cfg.r0, cfg.omega) / (cfg.omega * cfg.omega * r)
    dzdy = 1.0 / ambient.phi_prime(z)
    dF0 = forcing.dF0_dr(t, r, z) if forcing.dF0_dr else _fd(lambda rr: forcing.F0(t, rr, z), r)
    dF1 = forcing.dF1_dz(t, r, z) if forcing.dF1_dz else _fd(lambda zz: forcing.F1(t, r, zz), z)
    Yp = np.maximum(Y, 1e-300)
    div_exact = (forcing.F0(t, r, z) / np.sqrt(Yp)
                 + 2.0 * np.sqrt(Yp) * dF0 * drds * surrogate.A[0, 0]
                 + cfg.g * dF1 * dzdy * surrogate.A[1, 1])
    return Y, Z, div_fd, div_exact, mask


def _fd(fn, x, h=1e-6):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def divergence_check(surrogate: QuadraticSurrogate | DualState, cfg: ModelConfig,
                     ambient: AmbientProfile, forcing: Forcing, n: int = 64, t: float = 0.0,
                     box=None) -> float:
    """Minimum finite-difference divergence of V over the interior grid points."""
    if isinstance(surrogate, DualState):
        atoms = surrogate.sigma.atoms
        surrogate = QuadraticSurrogate.fit(atoms, surrogate.psi)
        if box is None:
            box = (atoms[:, 0].min(), atoms[:, 0].max(), atoms[:, 1].min(), atoms[:, 1].max())
    if box is None:
        raise ValueError("box is required for an explicit surrogate")
    _, _, div, _, mask = divergence_field(surrogate, cfg, ambient, forcing, box, n + 2, t)
    inner = np.zeros_like(mask)
    inner[1:-1, 1:-1] = True
    sel = mask & inner
    if not sel.any():
        raise ValueError("surrogate gradient leaves W on the whole grid")
    return float(np.min(div[sel]))
