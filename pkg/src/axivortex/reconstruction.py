"""Physical fields recovered from a converged dual state."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DomainError, r_of_s, s_of_r
from .dual import DualState, barycenter_selection, cell_assign
from .measure import FreeBoundary


def varsigma(boundary: FreeBoundary, cfg) -> np.ndarray:
    """Free surface r(rho(z)) = sqrt(2 f0(rho(z))) / Omega."""
    return np.asarray(r_of_s(boundary.rho, cfg.r0, cfg.omega))


def _row_of(state: DualState, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    j = np.floor(z / state.boundary.dz).astype(int)
    return np.clip(j, 0, state.boundary.n_z - 1)


def boundary_at(state: DualState, z) -> np.ndarray:
    """rho at arbitrary heights (constant on each row)."""
    return state.boundary.rho[_row_of(state, z)]


def pressure_field(state: DualState, r, z) -> np.ndarray:
    """phi(r, z) = P(s[r], z, theta0(z)) - Omega^2 r^2 / 2."""
    cfg = state.cfg
    r = np.asarray(r, dtype=float)
    if np.any(r < cfg.r0):
        raise DomainError(f"pressure needs r >= r0={cfg.r0}")
    s = s_of_r(r, cfg.r0)
    return state.P(s, z) - 0.5 * cfg.omega**2 * r**2


def theta_u_fields(state: DualState, r, z):
    """theta = Z_i*/g and u = sqrt(Y_i*)/r - r Omega with i* the assigned atom.

    Points outside the vortex (s[r] > rho(z)) are NaN.
    """
    cfg = state.cfg
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    r, z = np.broadcast_arrays(r, z)
    if np.any(r < cfg.r0):
        raise DomainError(f"fields need r >= r0={cfg.r0}")
    s = s_of_r(r, cfg.r0)
    inside = s <= boundary_at(state, z)
    idx = cell_assign(state, np.stack([s, z], axis=-1))
    q = state.sigma.atoms[idx]
    theta = np.where(inside, q[..., 1] / cfg.g, np.nan)
    u = np.where(inside, np.sqrt(q[..., 0]) / r - r * cfg.omega, np.nan)
    return theta, u


@dataclass
class PhysicalFields:
    r: np.ndarray          # (n_r,)
    z: np.ndarray          # (n_z,)
    pressure: np.ndarray   # (n_r, n_z), NaN outside the vortex
    theta: np.ndarray
    u: np.ndarray
    cell: np.ndarray       # assigned atom, -1 outside
    varsigma: np.ndarray   # free surface at z

    @property
    def mask(self) -> np.ndarray:
        return self.cell >= 0

    def to_csv(self, path) -> None:
        R, Z = np.meshgrid(self.r, self.z, indexing="ij")
        m = self.mask
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "z", "pressure", "theta", "u"])
            for row in zip(R[m], Z[m], self.pressure[m], self.theta[m], self.u[m]):
                w.writerow([repr(float(v)) for v in row])


def reconstruct(state: DualState, n_r: int = 128, n_z: int | None = None) -> PhysicalFields:
    """Sample the fields on a tensor grid r in [r0, max varsigma], z at row midpoints."""
    cfg = state.cfg
    n_z = n_z or state.boundary.n_z
    vs = varsigma(state.boundary, cfg)
    r = np.linspace(cfg.r0, max(float(vs.max()), cfg.r0 * (1 + 1e-9)), n_r)
    z = (np.arange(n_z) + 0.5) * cfg.H / n_z
    R, Z = np.meshgrid(r, z, indexing="ij")
    theta, u = theta_u_fields(state, R, Z)
    inside = ~np.isnan(theta)
    pres = np.where(inside, pressure_field(state, R, Z), np.nan)
    cell = np.where(inside, cell_assign(state, np.stack([s_of_r(R, cfg.r0), Z], -1)), -1)
    return PhysicalFields(r, z, pres, theta, u, cell, varsigma_at(state, z))


def varsigma_at(state: DualState, z) -> np.ndarray:
    cfg = state.cfg
    return np.asarray(r_of_s(boundary_at(state, z), cfg.r0, cfg.omega))


def surface_pressure(state: DualState, threshold: float = 1e-3) -> float:
    """max |phi(varsigma(z), z)| over rows with rho > threshold."""
    b = state.boundary
    m = b.rho > threshold
    if not m.any():
        return 0.0
    vs = varsigma(b, state.cfg)[m]
    return float(np.max(np.abs(pressure_field(state, vs, b.z_grid[m]))))


def gradient_balance(state: DualState, n: int = 256):
    """Residual of u^2/r + 2 Omega u - d phi/dr on an n x n interior grid.

    The radial derivative is a central difference; only stencils lying in a
    single cell and inside the vortex are used.  Returns (max relative
    residual, number of points used).
    """
    cfg = state.cfg
    vs = varsigma(state.boundary, cfg)
    r = np.linspace(cfg.r0, float(vs.max()), n + 2)[1:-1]
    z = (np.arange(n) + 0.5) * cfg.H / n
    h = 0.5 * (r[1] - r[0])
    R, Z = np.meshgrid(r, z, indexing="ij")
    Rm, Rp = R - h, R + h
    theta, u = theta_u_fields(state, R, Z)
    tp, _ = theta_u_fields(state, Rp, Z)
    tm, _ = theta_u_fields(state, np.maximum(Rm, cfg.r0), Z)
    S = lambda rr: np.stack([s_of_r(np.maximum(rr, cfg.r0), cfg.r0), Z], -1)  # noqa: E731
    same = (cell_assign(state, S(Rm)) == cell_assign(state, S(R))) & \
           (cell_assign(state, S(Rp)) == cell_assign(state, S(R)))
    ok = same & ~np.isnan(theta) & ~np.isnan(tp) & ~np.isnan(tm) & (Rm >= cfg.r0)
    dphi = (pressure_field(state, Rp, Z) - pressure_field(state, np.maximum(Rm, cfg.r0), Z)) / (2 * h)
    lhs = u**2 / R + 2 * cfg.omega * u
    res = np.abs(lhs - dphi)[ok]
    if res.size == 0:
        return 0.0, 0
    scale = np.max(np.abs(dphi[ok]))
    return float(np.max(res) / max(scale, 1e-300)), int(res.size)


def meridional_vw(traj, k: int):
    """Parcel estimate of (v, w) between steps k and k+1.

    Each atom's physical position is r(s_bar), z_bar of its cell; the
    meridional velocity is its displacement over one step.  Returns arrays
    (r, z, v, w) sampled at the step-k positions.
    """
    if k + 1 >= len(traj.states):
        raise IndexError("meridional velocity is unavailable at the final step")
    st0, st1 = traj.states[k], traj.states[k + 1]
    cfg = st0.cfg
    tau = traj.times[k + 1] - traj.times[k]
    s0, z0 = barycenter_selection(st0)
    s1, z1 = barycenter_selection(st1)
    r0 = np.asarray(r_of_s(s0, cfg.r0, cfg.omega))
    r1 = np.asarray(r_of_s(s1, cfg.r0, cfg.omega))
    return r0, np.asarray(z0), (r1 - r0) / tau, (np.asarray(z1) - np.asarray(z0)) / tau


@dataclass
class StabilityReport:
    passed: bool
    empty: list
    disconnected: list
    n_points: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "empty": self.empty,
                "disconnected": self.disconnected, "n_points": self.n_points}


def stability_check(state: DualState, n: int = 256) -> StabilityReport:
    """Every cell is hit by the grid and is 4-connected inside the vortex.

    The grid is uniform in (s, z); connectivity there is the same as in the
    physical (r, z) plane because s[r] is monotone.
    """
    cfg = state.cfg
    top = float(state.boundary.rho.max())
    z = (np.arange(n) + 0.5) * cfg.H / n
    s = (np.arange(n) + 0.5) * top / n if top > 0 else np.zeros(n)
    Sg, Zg = np.meshgrid(s, z, indexing="ij")
    inside = Sg <= boundary_at(state, Zg)
    lab = np.where(inside, cell_assign(state, np.stack([Sg, Zg], -1)), -1)
    empty, disconnected = [], []
    for i in range(len(state.sigma)):
        m = lab == i
        if not m.any():
            empty.append(i)
            continue
        _, ncomp = ndimage.label(m)
        if ncomp > 1:
            disconnected.append(i)
    return StabilityReport(not empty and not disconnected, empty, disconnected, int(inside.sum()))
