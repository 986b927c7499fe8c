"""Exact discrete optimal transport by successive shortest augmenting paths.

The transportation LP between two weighted clouds is solved on the dense
bipartite graph.  Dijkstra runs on reduced costs with node potentials, so
all arc lengths stay nonnegative; reverse arcs exist only where flow is
positive and always have zero reduced cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIZE_CAP = 4096
MASS_TOL = 1e-12


class TransportError(ValueError):
    pass


@dataclass
class OTResult:
    value: float
    plan: np.ndarray   # (n, m)
    u: np.ndarray      # source duals
    v: np.ndarray      # target duals
    a: np.ndarray
    b: np.ndarray

    @property
    def dual_value(self) -> float:
        return float(self.a @ self.u + self.b @ self.v)


def ground_cost(x: np.ndarray, y: np.ndarray, kind: str = "sqeuclidean_half") -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    if kind == "sqeuclidean_half":
        return 0.5 * np.sum(diff**2, axis=-1)
    if kind == "euclidean":
        return np.sqrt(np.sum(diff**2, axis=-1))
    raise TransportError(f"unknown ground cost {kind!r}")


def solve_transport(C: np.ndarray, a: np.ndarray, b: np.ndarray,
                    size_cap: int = SIZE_CAP) -> OTResult:
    """min <C, F> subject to F 1 = a, F^T 1 = b, F >= 0."""
    C = np.asarray(C, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = C.shape
    if n + m > size_cap:
        raise TransportError(f"problem size {n + m} exceeds cap {size_cap}")
    if np.any(a < 0) or np.any(b < 0):
        raise TransportError("negative mass")
    if abs(a.sum() - b.sum()) > MASS_TOL * max(1.0, a.sum()):
        raise TransportError(f"unbalanced masses {a.sum()!r} vs {b.sum()!r}")

    F = np.zeros((n, m))
    ra = a.copy()
    rb = b.copy()
    pi_s = np.zeros(n)
    pi_t = C.min(axis=0)
    eps = 1e-15 * max(1.0, a.sum())
    total = b.sum()
    tight = 1e-13 * max(1.0, float(np.abs(C).max()))
    _admissible_phase(C, F, ra, rb, pi_s, pi_t, eps, tight)

    while rb.sum() > 1e-14 * total and ra.max() > eps:
        rc = C + pi_s[:, None] - pi_t[None, :]
        np.maximum(rc, 0.0, out=rc)
        # Dijkstra over sinks only: a settled sink reaches, at no extra
        # cost, every source that ships to it, whose forward arcs are then
        # relaxed in one vectorised step.
        free = np.flatnonzero(ra > eps)
        ds = np.full(n, np.inf)
        ds[free] = 0.0
        sub = rc[free]
        dt = sub.min(axis=0)
        pred_t = free[sub.argmin(axis=0)]
        pred_s = np.full(n, -1)
        wt = dt.copy()
        done_t = np.zeros(m, bool)
        target = -1
        while True:
            j = int(np.argmin(wt))
            if wt[j] == np.inf:
                break
            done_t[j] = True
            wt[j] = np.inf
            if rb[j] > eps:
                target = j
                break
            srcs = np.flatnonzero((F[:, j] > 0) & (ds > dt[j]))
            if len(srcs):
                ds[srcs] = dt[j]
                pred_s[srcs] = j
                sub = rc[srcs] + dt[j]
                best = sub.min(axis=0)
                better = (best < dt) & ~done_t
                if better.any():
                    dt[better] = best[better]
                    wt[better] = best[better]
                    pred_t[better] = srcs[sub.argmin(axis=0)[better]]
        if target < 0:
            raise TransportError("no augmenting path (infeasible instance)")
        D = dt[target]
        pi_s += np.minimum(ds, D)
        pi_t += np.minimum(dt, D)
        _augment(F, ra, rb, pred_s, pred_t, target)
        _admissible_phase(C, F, ra, rb, pi_s, pi_t, eps, tight)

    return OTResult(float(np.sum(F * C)), F, -pi_s, pi_t, a, b)


def _augment(F, ra, rb, pred_s, pred_t, target):
    """Push the bottleneck amount along the path ending at sink ``target``."""
    path = []
    j = target
    while True:
        i = pred_t[j]
        path.append((i, j))
        if pred_s[i] < 0:
            break
        j = pred_s[i]
        path.append((i, j))  # reverse arc: cancel flow i -> j
    src = path[-1][0]
    delta = min(ra[src], rb[target])
    for k in range(1, len(path), 2):
        delta = min(delta, F[path[k]])
    for k, ij in enumerate(path):
        if k % 2 == 0:
            F[ij] += delta
        else:
            F[ij] -= delta
            if F[ij] < 1e-300:
                F[ij] = 0.0
    ra[src] -= delta
    rb[target] -= delta


def _admissible_phase(C, F, ra, rb, pi_s, pi_t, eps, tight):
    """Augment along zero-reduced-cost paths (breadth first) until none is left."""
    adm = (C + pi_s[:, None] - pi_t[None, :]) <= tight
    n, m = C.shape
    while ra.max() > eps and rb.max() > eps:
        pred_t = np.full(m, -1)
        pred_s = np.full(n, -1)
        seen_s = ra > eps
        seen_t = np.zeros(m, bool)
        frontier = np.flatnonzero(seen_s)
        target = -1
        while len(frontier):
            sub = adm[frontier]
            reach = sub.any(axis=0) & ~seen_t
            if not reach.any():
                break
            r_idx = np.flatnonzero(reach)
            pred_t[r_idx] = frontier[np.argmax(sub[:, r_idx], axis=0)]
            seen_t[r_idx] = True
            hits = r_idx[rb[r_idx] > eps]
            if len(hits):
                target = int(hits[0])
                break
            pos = F[:, r_idx] > 0
            new_s = pos.any(axis=1) & ~seen_s
            frontier = np.flatnonzero(new_s)
            pred_s[frontier] = r_idx[np.argmax(pos[frontier], axis=1)]
            seen_s[frontier] = True
        if target < 0:
            return
        _augment(F, ra, rb, pred_s, pred_t, target)


def exact_discrete_ot(x, a, y, b, ground: str = "sqeuclidean_half",
                      size_cap: int = SIZE_CAP) -> OTResult:
    """Optimal transport between clouds (x, a) and (y, b).

    With the default ground cost the value is W2^2 / 2.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    if len(x) == 0 or len(y) == 0:
        raise TransportError("empty cloud")
    return solve_transport(ground_cost(x, y, ground), a, b, size_cap)


def w1_distance(x, a, y, b, size_cap: int = SIZE_CAP) -> float:
    return exact_discrete_ot(x, a, y, b, "euclidean", size_cap).value


def w2_distance(x, a, y, b, size_cap: int = SIZE_CAP) -> float:
    return float(np.sqrt(max(2.0 * exact_discrete_ot(x, a, y, b, size_cap=size_cap).value, 0.0)))
