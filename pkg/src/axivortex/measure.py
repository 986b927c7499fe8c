"""Free boundary, reference measure quadrature and particle measures."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AmbientProfile, ModelConfig, density, r_of_s
from .semidiscrete import POLE_MARGIN, moments


class MeasureError(ValueError):
    pass


# ----------------------------------------------------------------------------
# free boundary

@dataclass(frozen=True)
class FreeBoundary:
    """rho(z) sampled at the row midpoints z_j = (j + 1/2) H / n_z."""

    z_grid: np.ndarray
    rho: np.ndarray
    H: float = 1.0
    r0: float = 1.0

    def __post_init__(self):
        z = np.asarray(self.z_grid, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if z.shape != rho.shape or z.ndim != 1 or len(z) < 1:
            raise MeasureError("z_grid and rho must be 1-D arrays of equal length")
        if not np.all(np.isfinite(rho)):
            raise MeasureError("rho must be finite")
        limit = 0.5 / self.r0**2 * (1.0 - POLE_MARGIN)
        if np.any(rho < 0) or np.any(rho > limit * (1 + 1e-12)):
            raise MeasureError(f"rho must lie in [0, {limit}]")
        object.__setattr__(self, "z_grid", z)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def constant(cls, value: float, n_z: int, H: float = 1.0, r0: float = 1.0) -> "FreeBoundary":
        z = (np.arange(n_z) + 0.5) * H / n_z
        return cls(z, np.full(n_z, float(value)), H, r0)

    @classmethod
    def from_function(cls, fn, n_z: int, H: float = 1.0, r0: float = 1.0) -> "FreeBoundary":
        z = (np.arange(n_z) + 0.5) * H / n_z
        return cls(z, np.asarray(fn(z), dtype=float) * np.ones(n_z), H, r0)

    @property
    def n_z(self) -> int:
        return len(self.z_grid)

    @property
    def dz(self) -> float:
        return self.H / self.n_z

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.rho) >= 0))

    def exact_mass(self, cfg: ModelConfig) -> float:
        """Row-exact mass of mu_rho (exact in s, midpoint in z)."""
        m0 = moments(self.rho, cfg.r0**2, cfg.omega)[0]
        return float(np.sum(m0) * self.dz)

    def varsigma(self, cfg: ModelConfig) -> np.ndarray:
        return np.asarray(r_of_s(self.rho, cfg.r0, cfg.omega))

    def to_csv(self, path, cfg: ModelConfig) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z", "rho", "varsigma"])
            for z, r, v in zip(self.z_grid, self.rho, self.varsigma(cfg)):
                w.writerow([repr(float(z)), repr(float(r)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, H: float = 1.0, r0: float = 1.0) -> "FreeBoundary":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], H, r0)


# ----------------------------------------------------------------------------
# reference measure

@dataclass(frozen=True)
class ReferenceMeasure:
    nodes: np.ndarray   # (K, 2) array of (s, z)
    weights: np.ndarray  # (K,)
    ds: np.ndarray       # (K,) cell width in s
    dz: float

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self) -> int:
        return len(self.weights)


def build_reference_measure(boundary: FreeBoundary, cfg: ModelConfig, n_s: int,
                            scheme: str = "tensor") -> ReferenceMeasure:
    """Midpoint quadrature of mu_rho restricted to D_rho.

    ``tensor``: a fixed s-grid on [0, max rho] with ``n_s`` cells, keeping the
    cells that lie inside D_rho, weight = density(mid) ds dz.
    ``rows``: ``n_s`` equal cells on [0, rho(z_j)] in every row, weights equal
    to the exact density integral over the cell.
    """
    if n_s < 2 or boundary.n_z < 2:
        raise MeasureError("quadrature resolution must be >= 2")
    dz = boundary.dz
    rho = boundary.rho
    top = float(rho.max())
    if top <= 0.0:
        return ReferenceMeasure(np.zeros((0, 2)), np.zeros(0), np.zeros(0), dz)
    if scheme == "tensor":
        ds = top / n_s
        left = np.arange(n_s) * ds
        mid = left + 0.5 * ds
        tol = 1e-12 * top
        S, Zg = np.meshgrid(mid, boundary.z_grid)
        L, R = np.meshgrid(left + ds, rho)
        keep = L <= R + tol
        s_nodes, z_nodes = S[keep], Zg[keep]
        w = density(s_nodes, cfg.r0, cfg.omega) * ds * dz
        dss = np.full(len(w), ds)
    elif scheme == "rows":
        parts_s, parts_z, parts_w, parts_d = [], [], [], []
        a = cfg.r0**2
        for zj, rj in zip(boundary.z_grid, rho):
            if rj <= 0:
                continue
            e = np.linspace(0.0, rj, n_s + 1)
            m0 = moments(e, a, cfg.omega)[0]
            parts_s.append(0.5 * (e[1:] + e[:-1]))
            parts_z.append(np.full(n_s, zj))
            parts_w.append(np.diff(m0) * dz)
            parts_d.append(np.diff(e))
        s_nodes = np.concatenate(parts_s)
        z_nodes = np.concatenate(parts_z)
        w = np.concatenate(parts_w)
        dss = np.concatenate(parts_d)
    else:
        raise MeasureError(f"unknown scheme {scheme!r}")
    pos = w > 0
    nodes = np.column_stack([s_nodes[pos], z_nodes[pos]])
    return ReferenceMeasure(nodes, w[pos], dss[pos], dz)


def f_pushforward(ref: ReferenceMeasure, ambient: AmbientProfile):
    """Map nodes (s, z) to (s, phi(z)); weights unchanged."""
    pts = ref.nodes.copy()
    if len(pts):
        pts[:, 1] = ambient.phi(pts[:, 1])
    return pts, ref.weights.copy()


# ----------------------------------------------------------------------------
# particle measure

@dataclass(frozen=True)
class ParticleMeasure:
    """Weighted atoms q_i = (Upsilon_i, Z_i) in the open positive quadrant."""

    atoms: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        q = np.asarray(self.atoms, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(q) == 0:
            raise MeasureError("empty atom set")
        if len(w) != len(q):
            raise MeasureError("atoms and weights differ in length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(w))):
            raise MeasureError("non-finite atom or weight")
        if np.any(q <= 0):
            raise MeasureError("atoms must have Upsilon > 0 and Z > 0")
        if np.any(w <= 0):
            raise MeasureError("weights must be positive")
        q.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", q)
        object.__setattr__(self, "weights", w)

    @classmethod
    def create(cls, atoms, weights=None) -> "ParticleMeasure":
        """Merge coincident atoms and renormalise the weights once."""
        q = np.asarray(atoms, dtype=float).reshape(-1, 2)
        w = np.ones(len(q)) if weights is None else np.asarray(weights, dtype=float).ravel()
        if len(w) != len(q):
            raise MeasureError("atoms and weights differ in length")
        uniq, first, inv = np.unique(q, axis=0, return_index=True, return_inverse=True)
        if len(uniq) < len(q):
            order = np.argsort(first)
            rank = np.empty_like(order)
            rank[order] = np.arange(len(order))
            merged = np.zeros(len(uniq))
            np.add.at(merged, rank[inv.ravel()], w)
            q, w = uniq[order], merged
        total = w.sum()
        if total <= 0:
            raise MeasureError("total weight must be positive")
        if total != 1.0:
            w = w / total
        return cls(q, w)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def ups(self) -> np.ndarray:
        return self.atoms[:, 0]

    @property
    def zed(self) -> np.ndarray:
        return self.atoms[:, 1]

    def with_atoms(self, atoms) -> "ParticleMeasure":
        """Same weight vector (bit-identical), new positions."""
        return ParticleMeasure(np.asarray(atoms, dtype=float), self.weights)

    def permuted(self, perm) -> "ParticleMeasure":
        perm = np.asarray(perm)
        return ParticleMeasure(self.atoms[perm], self.weights[perm])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "upsilon", "zed", "weight"])
            for i, ((u, z), wt) in enumerate(zip(self.atoms, self.weights)):
                w.writerow([i, repr(float(u)), repr(float(z)), repr(float(wt))])

    @classmethod
    def from_csv(cls, path) -> "ParticleMeasure":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise MeasureError(f"{path}: no atoms")
        missing = {"upsilon", "zed", "weight"} - set(rows[0])
        if missing:
            raise MeasureError(f"{path}: missing columns {sorted(missing)}")
        q = np.array([(float(r["upsilon"]), float(r["zed"])) for r in rows])
        w = np.array([float(r["weight"]) for r in rows])
        # a serialized normalised measure reloads bit-identically
        if abs(w.sum() - 1.0) <= 1e-12 and len(np.unique(q, axis=0)) == len(q):
            return cls(q, w)
        return cls.create(q, w)


def second_moment(sigma: ParticleMeasure) -> float:
    """1/2 sum_i w_i (Upsilon_i^2 + Z_i^2)."""
    return 0.5 * float(np.sum(sigma.weights * np.sum(sigma.atoms**2, axis=1)))


def support_radius(sigma: ParticleMeasure) -> float:
    return float(np.max(np.hypot(sigma.atoms[:, 0], sigma.atoms[:, 1])))
