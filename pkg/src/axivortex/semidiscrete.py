"""Row-exact integration against the reference density.

The height interval is cut into ``n_z`` rows (midpoint rule in z).  Inside
a row the lazy potential P(s, z) = max_i [s Y_i + phi(z) Z_i - Psi_i] is an
upper envelope of lines in s, and every integral of the density
rho(s) = a^2 / (1 - 2 a s)^2, a = r0^2, against polynomials of degree <= 2
or against f0 has a closed form.  This module is the numerical engine behind
the dual objective, the cell masses and the primal objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AmbientProfile, ModelConfig

POLE_MARGIN = 1e-3  # relative distance kept from the pole of f0


def pole_cap(cfg: ModelConfig) -> float:
    return cfg.s_max * (1.0 - POLE_MARGIN)


# ----------------------------------------------------------------------------
# antiderivatives from 0

_NTERMS = 24
# Taylor coefficients, highest power first, for np.polyval
_C1 = np.array([0.0, 0.0] + [1.0 - 1.0 / k for k in range(2, _NTERMS)])[::-1]
_C2 = np.array([0.0, 0.0, 0.0] + [1.0 - 2.0 / k for k in range(3, _NTERMS)])[::-1]
_SMALL = 0.1


def moments(s, a: float, omega: float):
    """(m0, m1, m2, mf): integrals over [0, s] of rho, s rho, s^2 rho, f0 rho.

    With x = 2 a s and u = 1 - x the antiderivatives are
    a^2 s / u, (x/u + log(1 - x)) / 4, (1/u + 2 log u - u) / (8 a) and
    a^2 Omega^2 x (2 - x) / (8 u^2); the two logarithmic ones switch to their
    Taylor series for small x to avoid cancellation.
    """
    s = np.asarray(s, dtype=float)
    x = 2.0 * a * s
    u = 1.0 - x
    m0 = a * a * s / u
    small = x < _SMALL
    xb = np.where(small, _SMALL, x)
    ub = 1.0 - xb
    g1 = xb / ub + np.log1p(-xb)
    g2 = 1.0 / ub + 2.0 * np.log(ub) - ub
    if np.any(small):
        g1 = np.where(small, np.polyval(_C1, x), g1)
        g2 = np.where(small, np.polyval(_C2, x), g2)
    m1 = 0.25 * g1
    m2 = g2 / (8.0 * a)
    mf = a * a * omega**2 / 8.0 * x * (2.0 - x) / u**2
    return m0, m1, m2, mf


def rho_density(s, a: float):
    return a * a / (1.0 - 2.0 * a * s) ** 2


# ----------------------------------------------------------------------------
# grid of rows

@dataclass(frozen=True)
class RowGrid:
    cfg: ModelConfig
    ambient: AmbientProfile
    n_z: int

    @property
    def dz(self) -> float:
        return self.cfg.H / self.n_z

    @property
    def z(self) -> np.ndarray:
        return (np.arange(self.n_z) + 0.5) * self.dz

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.ambient.phi(self.z), dtype=float)

    @property
    def a(self) -> float:
        return self.cfg.r0**2

    @property
    def cap(self) -> float:
        return pole_cap(self.cfg)


def envelope(ups, b, s_hi: float):
    """Pieces (index, s_start, s_end) of max_i (ups_i s + b_i) on [0, s_hi].

    Ties at s = 0 go to the larger slope, then to the lowest index, which is
    the same as lowest-index tie breaking everywhere except on a null set.
    """
    ups = [float(v) for v in ups]
    b = [float(v) for v in b]
    n = len(ups)
    cur = max(range(n), key=lambda i: (b[i], ups[i], -i))
    s = 0.0
    pieces = []
    while True:
        uc, bc = ups[cur], b[cur]
        nxt, x_next, u_next = -1, s_hi, -math.inf
        for k in range(n):
            du = ups[k] - uc
            if du > 0:
                x = (bc - b[k]) / du
                if x < s:
                    x = s
                if x < x_next or (x == x_next and nxt >= 0 and ups[k] > u_next):
                    nxt, x_next, u_next = k, x, ups[k]
        if nxt < 0:
            pieces.append((cur, s, s_hi))
            return pieces
        if x_next > s:
            pieces.append((cur, s, x_next))
        s, cur = x_next, nxt


@dataclass
class Sweep:
    """Per-row and per-atom integrals for one potential vector."""

    rho: np.ndarray       # boundary per row (minimiser or given)
    S: np.ndarray         # S(rho_j) per row
    mass: np.ndarray      # cell masses (z-weighted)
    m1: np.ndarray        # integral of s over each cell
    my: np.ndarray        # integral of phi(z) over each cell
    intP: float           # integral of P over the domain
    intF: float           # integral of f0 over the domain
    int_s2: float         # integral of s^2
    int_y2: float         # integral of phi(z)^2
    total: float          # total mass
    hess: np.ndarray | None
    at_cap: bool


def _upcrossings(Y, b, a: float, omega: float, lo, hi):
    """Up-crossing root of f0(s) = Y s + b on each piece [lo, hi] (nan if none).

    With u = 1 - 2 a s the condition reads Y u^2 - (Y + 2 a b) u + a^2 Omega^2 = 0;
    the up-crossing is the smaller root in u.
    """
    B = Y + 2.0 * a * b
    C = a * a * omega**2
    disc = B * B - 4.0 * Y * C
    ok = (B > 0) & (disc >= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        u1 = 2.0 * C / (B + np.sqrt(np.where(ok, disc, 0.0)))
    s = (1.0 - u1) / (2.0 * a)
    ok &= (s >= lo) & (s <= hi)
    return np.where(ok, s, np.nan)


def sweep(grid: RowGrid, ups: np.ndarray, zed: np.ndarray, psi: np.ndarray,
          rho: np.ndarray | None = None, hessian: bool = False) -> Sweep:
    """Integrate over every row.

    With ``rho=None`` the boundary of each row is the global minimiser of
    S(., z) found by enumerating the closed-form critical points; otherwise
    the given boundary is used.  ``hessian`` adds the derivative of the cell
    masses with respect to psi (including the moving-boundary term in the
    free mode).
    """
    cfg = grid.cfg
    a, om = grid.a, cfg.omega
    n = len(ups)
    nz = grid.n_z
    dz = grid.dz
    ys = grid.y
    cap = grid.cap
    free = rho is None
    ups = np.asarray(ups, dtype=float)
    zed = np.asarray(zed, dtype=float)
    psi = np.asarray(psi, dtype=float)
    ups_l = ups.tolist()

    # envelope pieces of every row, flattened
    P_row, P_atom, P_lo, P_hi = [], [], [], []
    for j in range(nz):
        hi = cap if free else float(rho[j])
        if hi <= 0.0:
            continue
        for i, lo, up in envelope(ups_l, (ys[j] * zed - psi).tolist(), hi):
            P_row.append(j)
            P_atom.append(i)
            P_lo.append(lo)
            P_hi.append(up)
    row = np.array(P_row, dtype=int)
    atom = np.array(P_atom, dtype=int)
    lo = np.array(P_lo, dtype=float)
    hi = np.array(P_hi, dtype=float)
    Y = ups[atom]
    bb = ys[row] * zed[atom] - psi[atom]
    M0l, M1l, _, _ = moments(lo, a, om)
    rho_out = np.zeros(nz)
    at_cap = False

    if free and len(row):
        M0h, M1h, _, MFh = moments(hi, a, om)
        piece_P = Y * (M1h - M1l) + bb * (M0h - M0l)
        csum = np.cumsum(piece_P)
        first = np.r_[True, row[1:] != row[:-1]]
        start = np.maximum.accumulate(np.where(first, np.arange(len(row)), 0))
        before = csum - piece_P - (csum - piece_P)[start]  # P integral before the piece
        r = _upcrossings(Y, bb, a, om, lo, hi)
        has = ~np.isnan(r)
        rr = np.where(has, r, hi)
        M0r, M1r, _, MFr = moments(rr, a, om)
        S_root = MFr - before - (Y * (M1r - M1l) + bb * (M0r - M0l))
        last = np.r_[row[1:] != row[:-1], True]
        # candidate table: interior roots, the cap and the empty domain
        c_piece = np.concatenate([np.flatnonzero(has), np.flatnonzero(last),
                                  np.full(nz, -1)])
        c_row = np.concatenate([row[has], row[last], np.arange(nz)])
        c_S = np.concatenate([S_root[has], (MFh - before - piece_P)[last], np.zeros(nz)])
        c_s = np.concatenate([r[has], hi[last], np.zeros(nz)])
        order = np.lexsort((c_s, c_S, c_row))
        pick = order[np.r_[True, c_row[order][1:] != c_row[order][:-1]]]
        chosen = np.full(nz, -1)
        chosen[c_row[pick]] = c_piece[pick]
        rho_out[c_row[pick]] = c_s[pick]
        at_cap = bool(np.any((rho_out >= cap) & (chosen >= 0)))
        # keep pieces up to the chosen one and cut it at the boundary
        limit = chosen[row]
        pos = np.arange(len(row))
        keep = pos <= limit
        cut = pos == limit
        hi = np.where(cut, rho_out[row], hi)
        row, atom, lo, hi, Y, bb = row[keep], atom[keep], lo[keep], hi[keep], Y[keep], bb[keep]
        M0l, M1l = M0l[keep], M1l[keep]
    elif not free:
        rho_out = np.asarray(rho, dtype=float).copy()

    M0h, M1h, M2h, MFh = moments(hi, a, om)
    dM0, dM1 = M0h - M0l, M1h - M1l
    piece_P = Y * dM1 + bb * dM0
    last = np.r_[row[1:] != row[:-1], True] if len(row) else np.zeros(0, bool)
    P_per_row = np.bincount(row, piece_P, nz)
    F_row = np.zeros(nz)
    F_row[row[last]] = MFh[last]
    S_out = F_row - P_per_row
    mass = np.bincount(atom, dM0 * dz, n)
    m1 = np.bincount(atom, dM1 * dz, n)
    my = np.bincount(atom, ys[row] * dM0 * dz, n)
    tot_row = np.zeros(nz)
    tot_row[row[last]] = M0h[last]
    s2_row = np.zeros(nz)
    s2_row[row[last]] = M2h[last]
    H = None
    if hessian:
        H = np.zeros((n, n))
        inter = np.flatnonzero(~last)
        i0, i1 = atom[inter], atom[inter + 1]
        wts = dz * rho_density(hi[inter], a) / (ups[i1] - ups[i0])
        np.add.at(H, (i0, i0), -wts)
        np.add.at(H, (i1, i1), -wts)
        np.add.at(H, (i0, i1), wts)
        np.add.at(H, (i1, i0), wts)
        if free:
            bl = np.flatnonzero(last & (hi < cap))
            ib = atom[bl]
            rb = hi[bl]
            slope = a * a * om**2 / (1.0 - 2.0 * a * rb) ** 2 - ups[ib]
            good = slope > 0
            np.add.at(H, (ib[good], ib[good]), -dz * rho_density(rb[good], a) / slope[good])
    return Sweep(rho_out, S_out, mass, m1, my,
                 float(np.sum(P_per_row) * dz), float(np.sum(F_row) * dz),
                 float(np.sum(s2_row) * dz), float(np.sum(ys**2 * tot_row) * dz),
                 float(np.sum(tot_row) * dz), H, at_cap)
