"""INI run configuration.

Sections and keys (units follow the model: lengths, 1/time, length/time^2)::

    [model]    r0, omega, g, H, I0 = lo, hi
    [ambient]  family = power_law | linear, A, B, alpha, beta  (theta0 = (A + B z^alpha)^beta)
               for linear: a, b  (theta0 = a + b z)
    [forcing]  kind = default | zero, M
    [solver]   n_z, method = newton | gradient, tol_mass, tol_rho, tol_gap, max_iter
    [time]     T, N, l0, l
    [sigma]    n_atoms, r_min, r_max, angle_min, angle_max, z_min   (random initial atoms)
    [output]   fields_n_r, fields_n_z, meridional = yes | no
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import AmbientProfile, ConfigError, Forcing, ModelConfig
from .dual import SolverOptions
from .measure import ParticleMeasure

SECTIONS = ("model", "ambient", "forcing", "solver", "time", "sigma", "output")


@dataclass(frozen=True)
class SigmaSpec:
    n_atoms: int = 8
    r_min: float = 0.2
    r_max: float = 0.5
    angle_min: float = 0.15
    angle_max: float = 1.42
    z_min: float = 0.0


# well-separated atoms in the quarter disc of radius 2 with Z >= 0.5; the
# oracle suite uses it unless atoms are given explicitly
ORACLE_SIGMA = SigmaSpec(n_atoms=8, r_min=0.8, r_max=1.9, angle_min=0.35, angle_max=1.2,
                         z_min=0.5)


@dataclass
class RunConfig:
    model: ModelConfig
    ambient: AmbientProfile
    forcing: Forcing
    solver: SolverOptions
    sigma: SigmaSpec
    fields_n_r: int = 64
    fields_n_z: int = 64
    meridional: bool = True
    raw: dict = field(default_factory=dict)


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def _pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {unknown}")
    sec = {s: (cp[s] if cp.has_section(s) else None) for s in SECTIONS}
    m, t, f = sec["model"], sec["time"], sec["forcing"]
    model = ModelConfig(
        r0=_get(m, "r0", float, 1.0), omega=_get(m, "omega", float, 1.0),
        g=_get(m, "g", float, 1.0), H=_get(m, "H", float, 1.0),
        I0=_get(m, "I0", _pair, (0.9, 2.1)), M=_get(f, "M", float, 0.25),
        l0=_get(t, "l0", float, 0.5), l=_get(t, "l", float, 4.0),
        T=_get(t, "T", float, 0.5), N=_get(t, "N", int, 16))

    a = sec["ambient"]
    family = _get(a, "family", str, "power_law").strip()
    if family == "power_law":
        ambient = AmbientProfile.power_law(_get(a, "A", float, 1.0), _get(a, "B", float, 1.0),
                                           _get(a, "alpha", float, 1.0), _get(a, "beta", float, 1.0),
                                           H=model.H)
    elif family == "linear":
        ambient = AmbientProfile.power_law(_get(a, "a", float, 1.0), _get(a, "b", float, 1.0),
                                           1.0, 1.0, H=model.H)
    else:
        raise ConfigError(f"[ambient] family: unknown {family!r}")

    kind = _get(f, "kind", str, "default").strip()
    if kind == "default":
        forcing = Forcing.default(model.M, model.g, model.r0)
    elif kind == "zero":
        forcing = Forcing.zero()
    else:
        raise ConfigError(f"[forcing] kind: unknown {kind!r}")

    s = sec["solver"]
    method = _get(s, "method", str, "newton").strip()
    if method not in ("newton", "gradient"):
        raise ConfigError(f"[solver] method: unknown {method!r}")
    solver = SolverOptions(n_z=_get(s, "n_z", int, 512), method=method,
                           tol_mass=_get(s, "tol_mass", float, 1e-11),
                           tol_rho=_get(s, "tol_rho", float, 1e-9),
                           tol_gap=_get(s, "tol_gap", float, 1e-7),
                           max_iter=_get(s, "max_iter", int, 300))
    if solver.n_z < 2:
        raise ConfigError("[solver] n_z must be >= 2")

    g = sec["sigma"]
    sig = SigmaSpec(n_atoms=_get(g, "n_atoms", int, 8), r_min=_get(g, "r_min", float, 0.2),
                    r_max=_get(g, "r_max", float, min(0.5, model.l0)),
                    angle_min=_get(g, "angle_min", float, 0.15),
                    angle_max=_get(g, "angle_max", float, 1.42),
                    z_min=_get(g, "z_min", float, 0.0))
    if not (0 < sig.r_min < sig.r_max and 0 < sig.angle_min < sig.angle_max < np.pi / 2
            and sig.n_atoms >= 1 and sig.r_max * np.sin(sig.angle_max) > sig.z_min):
        raise ConfigError("[sigma] needs n_atoms >= 1, 0 < r_min < r_max and "
                          "0 < angle_min < angle_max < pi/2, with z_min reachable")

    o = sec["output"]
    raw = {s_: dict(cp[s_]) for s_ in cp.sections()}
    n_r, n_zf = _get(o, "fields_n_r", int, 64), _get(o, "fields_n_z", int, 64)
    if n_r < 2 or n_zf < 1:
        raise ConfigError("[output] needs fields_n_r >= 2 and fields_n_z >= 1")
    return RunConfig(model, ambient, forcing, solver, sig, fields_n_r=n_r, fields_n_z=n_zf,
                     meridional=_get(o, "meridional", _bool, True), raw=raw)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def random_sigma(spec: SigmaSpec, seed: int) -> ParticleMeasure:
    """Equal-weight atoms uniform (by area) in an annulus sector of the quadrant."""
    rng = np.random.default_rng(seed)
    atoms = []
    while len(atoms) < spec.n_atoms:
        r = np.sqrt(rng.uniform(spec.r_min**2, spec.r_max**2))
        a = rng.uniform(spec.angle_min, spec.angle_max)
        q = (r * np.cos(a), r * np.sin(a))
        if q[1] >= spec.z_min:
            atoms.append(q)
    return ParticleMeasure.create(np.array(atoms))
