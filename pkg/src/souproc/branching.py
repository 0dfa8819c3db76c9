"""Supercritical binary branching: population bookkeeping and mass-only runs.

Each particle carries mass ``1/N`` and branches at rate ``N`` into 0 or 2
children.  Children are born at the parent's position.  Two mass-only
samplers are provided:

* ``"gillespie"`` - event by event, exact, cost proportional to the number
  of events (``~ N^2 * integral of mass``), practical for small ``N``;
* ``"exact"`` - grid-to-grid jumps using the closed-form transition law of
  the linear birth-death chain (binomial survivors, negative-binomial
  family sizes), with the extinction time inside the final interval drawn
  from its exact conditional law.  Cost is independent of ``N``.

Both sample the same process; the test suite checks one against the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from . import rng as crng
from .model import InitialMeasure, Mode, ValidatedConfig, time_grid


class ExtinctError(RuntimeError):
    """Operation needs a living population."""


@dataclass(frozen=True)
class Particle:
    id: int
    parent_id: Optional[int]
    birth_time: float
    position: np.ndarray
    noise_stream_key: int


@dataclass
class PopulationState:
    """Living particle cloud at one time point (arrays of equal length)."""

    time: float
    positions: np.ndarray
    ids: np.ndarray
    parent_ids: np.ndarray
    birth_times: np.ndarray
    keys: np.ndarray
    N: int
    event_counter: int = 0
    next_id: int = 0
    extinction_time: Optional[float] = None
    mass_per_particle: float = field(default=0.0)

    def __post_init__(self):
        if not self.mass_per_particle:
            self.mass_per_particle = 1.0 / self.N

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def total_mass(self) -> float:
        return self.count * self.mass_per_particle

    @property
    def dimension(self) -> int:
        return int(self.positions.shape[1])

    def particles(self) -> List[Particle]:
        return [
            Particle(int(self.ids[i]), None if self.parent_ids[i] < 0 else int(self.parent_ids[i]),
                     float(self.birth_times[i]), self.positions[i].copy(), int(self.keys[i]))
            for i in range(self.count)
        ]

    def with_positions(self, positions: np.ndarray) -> "PopulationState":
        return replace(self, positions=np.asarray(positions, dtype=float))

    def index_of(self, particle_id: int) -> int:
        hits = np.nonzero(self.ids == particle_id)[0]
        if hits.size == 0:
            raise KeyError(f"unknown particle id {particle_id}")
        return int(hits[0])


@dataclass
class MassTrajectory:
    times: np.ndarray
    mass: np.ndarray
    extinction_time: Optional[float] = None
    events: int = 0
    counts: Optional[np.ndarray] = None

    @property
    def extinct(self) -> bool:
        return self.extinction_time is not None

    def normalized(self, beta: float) -> np.ndarray:
        """``exp(-beta t) M_t`` on the grid."""
        return np.exp(-beta * self.times) * self.mass


def initial_positions(init: InitialMeasure, count: int, d: int,
                      gen: np.random.Generator) -> np.ndarray:
    if init.kind == "point":
        center = np.zeros(d) if init.mean is None else np.asarray(init.mean, float)
        return np.tile(center, (count, 1))
    if init.kind == "points":
        pts = np.asarray(init.points, dtype=float).reshape(-1, d)
        return pts[np.arange(count) % pts.shape[0]].copy()
    center = np.zeros(d) if init.mean is None else np.asarray(init.mean, float)
    return center + init.sd * gen.standard_normal((count, d))


def init_population(init: InitialMeasure, cfg: ValidatedConfig,
                    gen: Optional[np.random.Generator] = None) -> PopulationState:
    count = int(round(init.m0 * cfg.N))
    if count < 1:
        raise ValueError("initial particle count is zero")
    if gen is None:
        gen = np.random.default_rng(cfg.seed)
    pos = initial_positions(init, count, cfg.d, gen)
    return PopulationState(
        time=0.0, positions=pos, ids=np.arange(count, dtype=np.int64),
        parent_ids=np.full(count, -1, dtype=np.int64), birth_times=np.zeros(count),
        keys=crng.particle_keys(cfg.seed, count), N=cfg.N, next_id=count)


def next_branch_event(state: PopulationState, gen: np.random.Generator) -> Tuple[float, int]:
    """Time of the next branch event and the uniformly chosen particle id."""
    if state.count < 1:
        raise ExtinctError("already extinct")
    wait = gen.exponential(1.0 / (state.N * state.count))
    j = int(gen.integers(state.count))
    return state.time + wait, int(state.ids[j])


def apply_branch(state: PopulationState, particle_id: int, offspring: int,
                 event_time: Optional[float] = None) -> PopulationState:
    """Replace a particle by 0 or 2 children at its position."""
    if offspring not in (0, 2):
        raise ValueError("offspring must be 0 or 2")
    j = state.index_of(particle_id)
    t = state.time if event_time is None else float(event_time)
    if t < state.time:
        raise ValueError("event time precedes state time")
    keep = np.arange(state.count) != j
    pos, ids, par = state.positions[keep], state.ids[keep], state.parent_ids[keep]
    birth, keys = state.birth_times[keep], state.keys[keep]
    next_id = state.next_id
    if offspring == 2:
        parent_key = np.uint64(state.keys[j])
        new_keys = np.array([crng.child_key(parent_key, state.event_counter, w) for w in (0, 1)],
                            dtype=np.uint64)
        pos = np.vstack([pos, state.positions[j], state.positions[j]])
        ids = np.append(ids, [next_id, next_id + 1])
        par = np.append(par, [particle_id, particle_id])
        birth = np.append(birth, [t, t])
        keys = np.append(keys, new_keys)
        next_id += 2
    extinct = t if pos.shape[0] == 0 else state.extinction_time
    return replace(state, time=t, positions=pos, ids=ids.astype(np.int64),
                   parent_ids=par.astype(np.int64), birth_times=birth,
                   keys=keys.astype(np.uint64), event_counter=state.event_counter + 1,
                   next_id=next_id, extinction_time=extinct)


def detect_extinction(state: PopulationState) -> Optional[float]:
    return state.extinction_time


# --- mass-only -------------------------------------------------------------

def _bd_alpha_beta(lam: float, mu: float, t: float) -> Tuple[float, float]:
    """Zero-probability and geometric ratio of the linear birth-death law at t."""
    r = lam - mu
    g = math.expm1(r * t)
    denom = lam * g + r
    return mu * g / denom, lam * g / denom


def _bd_extinction_time(lam: float, mu: float, dt: float, k: int, u: float) -> float:
    """Draw the extinction time in (0, dt) given k particles at 0 and none at dt."""
    a_dt, _ = _bd_alpha_beta(lam, mu, dt)
    a = a_dt * u ** (1.0 / k)
    r = lam - mu
    # alpha(s) = a  <=>  e^{rs} = mu (1 - a) / (mu - a lam)
    return min(math.log(mu * (1.0 - a) / (mu - a * lam)) / r, dt)


def _mass_exact(cfg: ValidatedConfig, gen: np.random.Generator, times: np.ndarray) -> MassTrajectory:
    law = cfg.offspring
    lam = law.per_particle_rate * law.p2
    mu = law.per_particle_rate * law.p0
    k = cfg.particle_count
    counts = np.zeros(times.size, dtype=np.int64)
    counts[0] = k
    eta = None
    for i in range(1, times.size):
        dt = times[i] - times[i - 1]
        alpha, ratio = _bd_alpha_beta(lam, mu, dt)
        alive = int(gen.binomial(k, 1.0 - alpha))
        if alive == 0:
            eta = times[i - 1] + _bd_extinction_time(lam, mu, dt, k, gen.random())
            break
        k = alive + int(gen.negative_binomial(alive, 1.0 - ratio))
        counts[i] = k
    return MassTrajectory(times, counts / cfg.N, eta, counts=counts)


def _mass_gillespie(cfg: ValidatedConfig, gen: np.random.Generator, times: np.ndarray) -> MassTrajectory:
    law = cfg.offspring
    rate = law.per_particle_rate
    k = cfg.particle_count
    counts = np.zeros(times.size, dtype=np.int64)
    counts[0] = k
    t = 0.0
    events = 0
    idx = 1
    eta = None
    while idx < times.size:
        t_next = t + gen.exponential(1.0 / (rate * k))
        while idx < times.size and times[idx] < t_next:
            counts[idx] = k
            idx += 1
        if idx >= times.size:
            break
        t = t_next
        events += 1
        k += 1 if gen.random() < law.p2 else -1
        if k == 0:
            eta = t
            break
    return MassTrajectory(times, counts / cfg.N, eta, events, counts)


def run_mass_only(cfg: ValidatedConfig, gen: np.random.Generator,
                  times: Optional[np.ndarray] = None, method: str = "exact") -> MassTrajectory:
    """Total-mass trajectory on ``times`` (default: the config's step grid)."""
    if cfg.mode is not Mode.MASS_ONLY:
        raise ValueError("run_mass_only needs mode = mass_only")
    if times is None:
        times = time_grid(cfg.t_max, cfg.h)
    times = np.asarray(times, dtype=float)
    if method == "exact":
        return _mass_exact(cfg, gen, times)
    if method == "gillespie":
        return _mass_gillespie(cfg, gen, times)
    raise ValueError(f"unknown mass-only method {method!r}")
