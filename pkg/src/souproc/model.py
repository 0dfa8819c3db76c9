"""Domain types, parameter validation and closed-form reference values."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid model or numerical parameters."""


class Mode(str, Enum):
    ORDINARY = "ordinary"
    INTERACTING = "interacting"
    COUPLED = "coupled"
    MASS_ONLY = "mass_only"


@dataclass(frozen=True)
class GaussianSpec:
    mean: tuple
    variance_per_coordinate: float

    def __post_init__(self):
        if not self.variance_per_coordinate > 0:
            raise ConfigError("variance_per_coordinate must be positive")
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))

    @property
    def dimension(self) -> int:
        return len(self.mean)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance_per_coordinate)

    def shifted(self, center) -> "GaussianSpec":
        return GaussianSpec(tuple(center), self.variance_per_coordinate)


@dataclass(frozen=True)
class InitialMeasure:
    """Finite initial measure: total mass plus a rule for particle positions.

    ``kind`` is one of ``"point"`` (all mass at ``mean``, default origin),
    ``"points"`` (explicit list, cycled if shorter than the particle count)
    or ``"gaussian"`` (i.i.d. cloud with per-coordinate std ``sd``).
    """

    m0: float = 1.0
    kind: str = "point"
    mean: Optional[tuple] = None
    sd: float = 1.0
    points: Optional[tuple] = None

    def __post_init__(self):
        if not (self.m0 > 0 and math.isfinite(self.m0)):
            raise ConfigError("initial mass m0 must be positive and finite")
        if self.kind not in ("point", "points", "gaussian"):
            raise ConfigError(f"unknown initial measure kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sd > 0:
            raise ConfigError("gaussian initial measure needs sd > 0")
        if self.kind == "points" and not self.points:
            raise ConfigError("'points' initial measure needs a non-empty point list")


@dataclass(frozen=True)
class SimConfig:
    d: int = 1
    gamma: float = 1.0
    beta: float = 0.5
    N: int = 100
    h: float = 0.01
    t_max: float = 10.0
    mode: Mode = Mode.COUPLED
    initial: InitialMeasure = field(default_factory=InitialMeasure)
    seed: int = 0
    Q: int = 32
    # Particle-count cap; 0 disables. Past the cap branching turns critical
    # and particle weights grow like exp(beta t), see branching.py.
    particle_cap: int = 0
    # Declare survival once total mass exceeds this value; 0 disables.
    stop_mass: float = 0.0


@dataclass(frozen=True)
class ValidatedConfig:
    cfg: SimConfig
    particle_count: int
    n_steps: int
    offspring: "OffspringLaw"

    def __getattr__(self, name):
        # Delegate model fields (gamma, beta, ...) to the wrapped config.
        if name == "cfg":
            raise AttributeError(name)
        return getattr(self.cfg, name)

    @property
    def grid(self) -> np.ndarray:
        return time_grid(self.cfg.t_max, self.cfg.h)

    def with_(self, **changes) -> "ValidatedConfig":
        return validate_config(replace(self.cfg, **changes))


@dataclass(frozen=True)
class OffspringLaw:
    p0: float
    p2: float
    per_particle_rate: float

    @property
    def mean(self) -> float:
        return 2.0 * self.p2

    @property
    def variance(self) -> float:
        return 4.0 * self.p2 - self.mean ** 2

    @property
    def extinction_probability_per_particle(self) -> float:
        return self.p0 / self.p2


def time_grid(t_max: float, h: float) -> np.ndarray:
    """Grid ``0, h, 2h, ...`` ending exactly at ``t_max``."""
    k = int(math.floor(t_max / h + 1e-9))
    grid = np.arange(k + 1, dtype=float) * h
    if t_max - grid[-1] > 1e-9 * h:
        grid = np.append(grid, t_max)
    else:
        grid[-1] = t_max
    return grid


def initial_particle_count(m0: float, N: int) -> int:
    count = int(round(m0 * N))
    if count >= 1:
        rel = abs(count - m0 * N) / (m0 * N)
        if rel > 0.01:
            warnings.warn(
                f"m0*N = {m0 * N:g} rounded to {count} particles "
                f"(relative error {rel:.1%})", stacklevel=3)
    return count


def validate_config(raw: SimConfig) -> ValidatedConfig:
    """Check invariants and materialize particle count and grid size."""
    if not isinstance(raw.d, (int, np.integer)) or raw.d < 1:
        raise ConfigError("dimension d must be a positive integer")
    if not isinstance(raw.N, (int, np.integer)) or raw.N < 1:
        raise ConfigError("N must be a positive integer")
    if not raw.h > 0:
        raise ConfigError("step must be positive")
    if not raw.beta > 0:
        raise ConfigError("beta must be positive")
    if not math.isfinite(raw.gamma):
        raise ConfigError("gamma must be finite")
    if not raw.t_max >= raw.h:
        raise ConfigError("t_max must be at least one step h")
    if raw.Q < 1:
        raise ConfigError("slice count Q must be at least 1")
    if raw.particle_cap < 0 or raw.stop_mass < 0:
        raise ConfigError("particle_cap and stop_mass must be non-negative")
    mode = Mode(raw.mode)
    init = raw.initial
    if mode is not Mode.MASS_ONLY:
        if init.mean is not None and len(init.mean) != raw.d:
            raise ConfigError("initial mean has wrong dimension")
        if init.points is not None and any(len(p) != raw.d for p in init.points):
            raise ConfigError("initial points have wrong dimension")
    count = initial_particle_count(init.m0, raw.N)
    if count < 1:
        raise ConfigError("initial particle count rounds to zero")
    law = offspring_probabilities(raw.beta, raw.N)
    cfg = replace(raw, mode=mode, seed=int(raw.seed) & ((1 << 64) - 1))
    n_steps = len(time_grid(raw.t_max, raw.h)) - 1
    return ValidatedConfig(cfg=cfg, particle_count=count, n_steps=n_steps, offspring=law)


def stationary_law(gamma: float, d: int) -> GaussianSpec:
    """Stationary law of the origin-attracting OU motion: N(0, I/(2 gamma))."""
    if not gamma > 0:
        raise ConfigError("no stationary law in repelling/neutral regime")
    return GaussianSpec((0.0,) * int(d), 1.0 / (2.0 * gamma))


def extinction_probability(beta: float, m0: float) -> float:
    """P(total mass ever hits zero) = exp(-2 beta m0)."""
    if not (beta > 0 and m0 >= 0):
        raise ConfigError("need beta > 0 and m0 >= 0")
    return math.exp(-2.0 * beta * m0)


def offspring_probabilities(beta: float, N: int) -> OffspringLaw:
    """Binary 0/2 offspring law with branching rate N per particle.

    Mass drift is N * (p2 - p0) / N * M = beta * M and the jump variance
    per unit time is M, matching the Feller diffusion in the limit.
    """
    if beta < 0:
        raise ConfigError("beta must be non-negative")
    if N <= beta:
        raise ConfigError("refine N: need N > beta")
    bias = beta / (2.0 * N)
    return OffspringLaw(p0=0.5 - bias, p2=0.5 + bias, per_particle_rate=float(N))


def feller_mean(m0: float, beta: float, t):
    return m0 * np.exp(beta * np.asarray(t, dtype=float))


def feller_variance(m0: float, beta: float, t):
    t = np.asarray(t, dtype=float)
    return (m0 / beta) * (np.exp(2 * beta * t) - np.exp(beta * t))


def normalized_mass_laplace(lam: float, beta: float, m0: float, t: float) -> float:
    """E exp(-lam e^{-beta t} M_t) for the Feller diffusion started at m0."""
    return math.exp(-2.0 * lam * beta * m0 / (2.0 * beta + lam * (1.0 - math.exp(-beta * t))))


def survival_probability(beta: float, m0: float) -> float:
    return 1.0 - extinction_probability(beta, m0)


def as_points(values: Sequence, d: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    return arr.reshape(-1, d)
