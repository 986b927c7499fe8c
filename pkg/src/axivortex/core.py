"""Physical constants, ambient profile, coordinate maps, cost and forcing.

Everything here is a pure function of immutable inputs.  The momentum
coordinate ``s`` lives on ``[0, 1/(2 r0^2))``; ``f0`` has a pole at the
right end of that interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a coordinate map."""


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    """Physical constants plus the time grid of the transport scheme."""

    r0: float = 1.0
    omega: float = 1.0
    g: float = 1.0
    H: float = 1.0
    M: float = 0.25
    I0: tuple[float, float] = (0.9, 2.1)
    l0: float = 0.5
    l: float = 4.0
    T: float = 0.5
    N: int = 16

    def __post_init__(self):
        for name in ("r0", "omega", "g", "H", "l0", "l", "T"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if not (math.isfinite(self.M) and self.M >= 0):
            raise ConfigError(f"M must be >= 0, got {self.M!r}")
        lo, hi = self.I0
        if not (0 < lo < hi):
            raise ConfigError(f"I0 must satisfy 0 < lo < hi, got {self.I0!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N!r}")

    @property
    def s_max(self) -> float:
        """Pole of f0, i.e. the right end of the momentum interval."""
        return 0.5 / self.r0**2

    @property
    def tau(self) -> float:
        return self.T / self.N

    def support_growth_bound(self, t: float) -> float:
        """Support radius allowed at time t: (e^{4Mt}(4 l0 + 1) - 1) / 4."""
        return (math.exp(4.0 * self.M * t) * (4.0 * self.l0 + 1.0) - 1.0) / 4.0

    def theorem_precondition(self) -> bool:
        return math.exp(4.0 * self.M * self.T) * (4.0 * self.l0 + 1.0) < self.l + 1.0

    def velocity_bound(self, radius: float | None = None) -> float:
        """C0(l) = M sqrt(4 l + 1)."""
        radius = self.l if radius is None else radius
        return self.M * math.sqrt(4.0 * radius + 1.0)


# ----------------------------------------------------------------------------
# coordinate maps

def f0(s, r0: float = 1.0, omega: float = 1.0):
    """r0^2 Omega^2 / (2 (1 - 2 r0^2 s)) on [0, 1/(2 r0^2))."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= 0.5 / r0**2):
        raise DomainError(f"f0 is defined on [0, {0.5 / r0**2}); got {s}")
    out = r0**2 * omega**2 / (2.0 * (1.0 - 2.0 * r0**2 * s_arr))
    return float(out) if out.ndim == 0 else out


def f0_prime(s, r0: float = 1.0, omega: float = 1.0):
    s_arr = np.asarray(s, dtype=float)
    out = r0**4 * omega**2 / (1.0 - 2.0 * r0**2 * s_arr) ** 2
    return float(out) if out.ndim == 0 else out


def density(s, r0: float = 1.0, omega: float = 1.0):
    """Density (2 f0(s) / Omega^2)^2 of the reference measure.

    Equal to r0^4 / (1 - 2 r0^2 s)^2, so it does not depend on Omega.
    """
    s_arr = np.asarray(s, dtype=float)
    out = r0**4 / (1.0 - 2.0 * r0**2 * s_arr) ** 2
    return float(out) if out.ndim == 0 else out


def s_of_r(r, r0: float = 1.0):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < r0):
        raise DomainError(f"s_of_r needs r >= r0={r0}; got {r}")
    out = 0.5 * (1.0 / r0**2 - 1.0 / r_arr**2)
    return float(out) if out.ndim == 0 else out


def r_of_s(s, r0: float = 1.0, omega: float = 1.0):
    """Inverse of s_of_r: sqrt(2 f0(s)) / Omega."""
    out = np.sqrt(2.0 * np.asarray(f0(s, r0, omega))) / omega
    return float(out) if out.ndim == 0 else out


def cost_c(p, m, q):
    """c(p, m, q) = s*Upsilon + z*Z/m, broadcasting over leading axes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise DomainError("cost needs m > 0")
    out = p[..., 0] * q[..., 0] + p[..., 1] * q[..., 1] / m
    return float(out) if out.ndim == 0 else out


def quadratic_F(s, t, ups, zed):
    return 0.5 * (s - ups) ** 2 + 0.5 * (t - zed) ** 2


# ----------------------------------------------------------------------------
# ambient temperature

@dataclass(frozen=True)
class AmbientProfile:
    """Ambient potential temperature theta0 on [0, H] and its derivative."""

    theta0: Callable
    dtheta0: Callable
    H: float = 1.0
    lipschitz_bound: float | None = None
    label: str = "custom"

    @classmethod
    def power_law(cls, A: float = 1.0, B: float = 1.0, alpha: float = 1.0,
                  beta: float = 1.0, H: float = 1.0) -> "AmbientProfile":
        """theta0(z) = (A + B z^alpha)^beta."""

        def theta0(z):
            return (A + B * np.power(z, alpha)) ** beta

        def dtheta0(z):
            z = np.asarray(z, dtype=float)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = beta * (A + B * z**alpha) ** (beta - 1.0) * B * alpha * z ** (alpha - 1.0)
            return np.where(z == 0.0, 0.0 if alpha > 1 else (beta * A ** (beta - 1) * B if alpha == 1 else np.inf), d)

        zs = np.linspace(0.0, H, 2001)
        dvals = np.abs(dtheta0(zs))
        lip = float(np.max(dvals)) if np.all(np.isfinite(dvals)) else None
        return cls(theta0, dtheta0, H, lip, f"power_law(A={A}, B={B}, alpha={alpha}, beta={beta})")

    @classmethod
    def from_callable(cls, theta0: Callable, dtheta0: Callable | None = None,
                      H: float = 1.0) -> "AmbientProfile":
        if dtheta0 is None:
            h = 1e-6 * H

            def dtheta0(z):
                z = np.asarray(z, dtype=float)
                lo = np.clip(z - h, 0.0, H)
                hi = np.clip(z + h, 0.0, H)
                return (theta0(hi) - theta0(lo)) / (hi - lo)
        return cls(theta0, dtheta0, H, None, "custom")

    def phi(self, z):
        """z / theta0(z); strictly increasing under A1."""
        z = np.asarray(z, dtype=float)
        out = z / self.theta0(z)
        return float(out) if np.ndim(out) == 0 else out

    def phi_prime(self, z):
        z = np.asarray(z, dtype=float)
        th = self.theta0(z)
        out = (th - z * self.dtheta0(z)) / th**2
        return float(out) if np.ndim(out) == 0 else out

    def phi_inv(self, y, tol: float = 1e-12):
        """Inverse of phi on [phi(0), phi(H)] by vectorised bisection."""
        y = np.asarray(y, dtype=float)
        y_lo, y_hi = self.phi(0.0), self.phi(self.H)
        slack = 1e-14 * max(1.0, abs(y_hi))
        if np.any(y < y_lo - slack) or np.any(y > y_hi + slack):
            raise DomainError(f"phi_inv: {y} outside [{y_lo}, {y_hi}]")
        lo = np.zeros_like(y)
        hi = np.full_like(y, self.H)
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            below = self.phi(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        out = 0.5 * (lo + hi)
        return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------------
# forcing

@dataclass(frozen=True)
class Forcing:
    """Tangential-momentum source F0(t, r, z) and heat source F1(t, r, z).

    ``dF0_dr`` and ``dF1_dz`` are optional analytic derivatives used by the
    divergence diagnostic; finite differences are used when they are absent.
    """

    F0: Callable
    F1: Callable
    dF0_dr: Callable | None = None
    dF1_dz: Callable | None = None
    label: str = "custom"

    @classmethod
    def default(cls, M: float, g: float, r0: float) -> "Forcing":
        """F0 = M (1 - e^{-(r - r0)}), F1 = (M/g)(1 - e^{-z})."""

        def F0(t, r, z):
            return M * (1.0 - np.exp(-(np.asarray(r, dtype=float) - r0))) + 0.0 * np.asarray(z, dtype=float)

        def F1(t, r, z):
            return (M / g) * (1.0 - np.exp(-np.asarray(z, dtype=float))) + 0.0 * np.asarray(r, dtype=float)

        def dF0_dr(t, r, z):
            return M * np.exp(-(np.asarray(r, dtype=float) - r0)) + 0.0 * np.asarray(z, dtype=float)

        def dF1_dz(t, r, z):
            return (M / g) * np.exp(-np.asarray(z, dtype=float)) + 0.0 * np.asarray(r, dtype=float)

        return cls(F0, F1, dF0_dr, dF1_dz, f"default(M={M})")

    @classmethod
    def zero(cls) -> "Forcing":
        def nil(t, r, z):
            return 0.0 * np.asarray(r, dtype=float) + 0.0 * np.asarray(z, dtype=float)

        return cls(nil, nil, nil, nil, "zero")

    def __call__(self, t, r, z):
        return self.F0(t, r, z), self.F1(t, r, z)


def forcing_eval(forcing: Forcing, t, r, z):
    """(F0, F1) at (t, r, z)."""
    return forcing(t, r, z)


# ----------------------------------------------------------------------------
# assumption report

@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {c.name: {"passed": c.passed, "margin": c.margin, "detail": c.detail}
                for c in self.checks}


def validate_assumptions(cfg: ModelConfig, ambient: AmbientProfile,
                         forcing: Forcing | None = None, n_grid: int = 257) -> AssumptionReport:
    """Sample A1, A1', A2 and B1-B3 on a grid; never raises."""
    report = AssumptionReport()
    z = np.linspace(0.0, cfg.H, n_grid)
    lo, hi = cfg.I0

    def _safe(fn, *args):
        try:
            with np.errstate(all="ignore"):
                return np.asarray(fn(*args), dtype=float)
        except Exception:  # report, never abort
            return np.full(np.broadcast(*[np.asarray(a) for a in args]).shape, np.nan)

    th = _safe(ambient.theta0, z)
    dth = _safe(ambient.dtheta0, z)
    ok = np.all(np.isfinite(th))
    margin = float(np.min(np.minimum(th - lo, hi - th))) if ok else -math.inf
    report.checks.append(AssumptionCheck("theta0_range", ok and margin > 0, margin,
                                         f"theta0 must map [0,H] into I0={cfg.I0}"))

    with np.errstate(invalid="ignore"):
        a1 = th - z * dth
    inner = a1[1:-1]
    m_a1 = float(np.min(inner)) if np.all(np.isfinite(inner)) else -math.inf
    report.checks.append(AssumptionCheck("A1", m_a1 > 0, m_a1, "theta0 - z theta0' > 0 on (0,H)"))
    m_a1p = float(np.min(a1)) if np.all(np.isfinite(a1)) else -math.inf
    report.checks.append(AssumptionCheck("A1'", m_a1p > 0, m_a1p, "inf of theta0 - z theta0' over [0,H]"))

    slopes = np.abs(np.diff(th) / np.diff(z))
    lip = float(np.max(slopes)) if np.all(np.isfinite(slopes)) else math.inf
    bound = ambient.lipschitz_bound
    if bound is None:
        passed, margin = math.isfinite(lip), (0.0 if math.isfinite(lip) else -math.inf)
    else:
        passed, margin = lip <= bound * (1 + 1e-9) + 1e-12, bound - lip
    report.checks.append(AssumptionCheck("A2", passed, float(margin),
                                         f"estimated Lipschitz constant {lip:.6g}"))

    if forcing is None:
        return report
    r = r_of_s(np.linspace(0.0, 0.99 * cfg.s_max, 41), cfg.r0, cfg.omega)
    zz = np.linspace(0.0, cfg.H, 41)
    ts = np.array([0.0, 0.5 * cfg.T, cfg.T])
    T_, R_, Z_ = np.meshgrid(ts, r, zz, indexing="ij")
    F0v = _safe(forcing.F0, T_, R_, Z_)
    F1v = _safe(forcing.F1, T_, R_, Z_) * cfg.g
    if np.all(np.isfinite(F0v)) and np.all(np.isfinite(F1v)):
        m_b1 = float(min(F0v.min(), F1v.min(), cfg.M - F0v.max(), cfg.M - F1v.max()))
    else:
        m_b1 = -math.inf
    report.checks.append(AssumptionCheck("B1", m_b1 >= 0, m_b1, "0 <= F0, g F1 <= M"))

    h = 1e-6
    dF0_dz = (_safe(forcing.F0, T_, R_, Z_ + h) - _safe(forcing.F0, T_, R_, Z_ - h)) / (2 * h)
    dF1_dr = (_safe(forcing.F1, T_, R_ + h, Z_) - _safe(forcing.F1, T_, R_ - h, Z_)) / (2 * h)
    worst = float(np.max(np.abs(np.concatenate([dF0_dz.ravel(), dF1_dr.ravel()]))))
    if not math.isfinite(worst):
        worst = math.inf
    report.checks.append(AssumptionCheck("B2", worst <= 1e-6 * max(cfg.M, 1.0), -worst,
                                         "dF0/dz = dF1/dr = 0"))

    dF0_dr = (_safe(forcing.F0, T_, R_ + h, Z_) - _safe(forcing.F0, T_, R_ - h, Z_)) / (2 * h)
    dF1_dz = (_safe(forcing.F1, T_, R_, Z_ + h) - _safe(forcing.F1, T_, R_, Z_ - h)) / (2 * h)
    m_b3 = float(min(dF0_dr.min(), dF1_dz.min()))
    if not math.isfinite(m_b3):
        m_b3 = -math.inf
    report.checks.append(AssumptionCheck("B3", m_b3 > 0, m_b3, "dF0/dr > 0 and dF1/dz > 0"))
    return report
