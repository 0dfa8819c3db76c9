"""Particle motion: exact OU steps, Euler COM-interacting steps, the COM
correspondence, and the coupled engine that drives both systems with one
branching history and one set of Gaussian increments.

Within a grid step, branch events are processed in exact time order against
the step-start anchors; each lineage's Gaussian increment is assembled
from the segments between its events (see ``_kernels``).  The ordinary
system is exact in law given the branching; the interacting system is
explicit Euler with the COM frozen at the step start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from numba import njit

from . import _kernels as K
from . import rng as crng
from .branching import ExtinctError, PopulationState, initial_positions
from .model import ValidatedConfig, time_grid

PHI_CODES = {"none": K.PHI_NONE, "tanh": K.PHI_TANH,
             "gaussian-bump": K.PHI_BUMP, "constant": K.PHI_CONST}


def ou_sigma(gamma: float, h: float) -> float:
    return K.ou_sigma(float(gamma), float(h))


def ou_exact_step(position, gamma: float, h: float, noise) -> np.ndarray:
    """Exact OU transition driven by standard normals ``noise``."""
    if not h > 0:
        raise ValueError("step must be positive")
    return math.exp(-gamma * h) * np.asarray(position, dtype=float) + ou_sigma(gamma, h) * np.asarray(noise, dtype=float)


def _need_alive(state: PopulationState):
    if state.count < 1:
        raise ExtinctError("empty population")


def interacting_em_step(state: PopulationState, gamma: float, h: float, noises) -> PopulationState:
    """One Euler step toward the (frozen) COM: Y + gamma (Ybar - Y) h + sqrt(h) xi."""
    _need_alive(state)
    y = state.positions
    ybar = y.mean(axis=0)
    new = y + gamma * (ybar - y) * h + math.sqrt(h) * np.asarray(noises, dtype=float)
    return replace(state, positions=new, time=state.time + h)


def ordinary_step(state: PopulationState, gamma: float, h: float, noises) -> PopulationState:
    """Exact OU step toward the origin for every particle."""
    _need_alive(state)
    return replace(state, positions=ou_exact_step(state.positions, gamma, h, noises),
                   time=state.time + h)


class NoiseGrid:
    """Standard normals indexed by (particle key, step index, coordinate).

    ``level`` refines a root grid of step ``h * 2**level`` by Levy midpoint
    splits, so runs at ``h`` (level 0) and ``h/2`` (level 1) share the
    Brownian path on the coarse cells.
    """

    def __init__(self, d: int, level: int = 0):
        self.d = d
        self.level = level

    def normals(self, keys: np.ndarray, step: int) -> np.ndarray:
        out = np.empty((len(keys), self.d))
        _fill_normals(np.asarray(keys, dtype=np.uint64), step, self.level, out)
        return out


@njit(cache=True, nogil=True)
def _fill_normals(keys, step, level, out):
    for i in range(keys.shape[0]):
        for c in range(out.shape[1]):
            out[i, c] = crng.cell_normal(keys[i], step, c, level)


@dataclass(frozen=True)
class OffsetAccumulator:
    """Running trapezoid of ``gamma * int_0^t Zbar ds``."""

    value: np.ndarray
    time: float = 0.0
    nodes: tuple = ()

    @classmethod
    def zero(cls, d: int) -> "OffsetAccumulator":
        return cls(np.zeros(d), 0.0, ())


def com_offset_update(acc: OffsetAccumulator, zbar_prev, zbar_next, dt: float,
                      gamma: float, keep_nodes: bool = False) -> OffsetAccumulator:
    if not dt > 0:
        raise ValueError("dt must be positive")
    zp = np.asarray(zbar_prev, dtype=float)
    zn = np.asarray(zbar_next, dtype=float)
    value = acc.value + gamma * dt * 0.5 * (zp + zn)
    nodes = acc.nodes + ((acc.time + dt, tuple(zn)),) if keep_nodes else acc.nodes
    return OffsetAccumulator(value, acc.time + dt, nodes)


def correspondence_transform(z_state: PopulationState, acc: OffsetAccumulator) -> PopulationState:
    """Shift every ordinary particle by the accumulated COM offset."""
    if abs(z_state.time - acc.time) > 1e-9 * max(1.0, abs(acc.time)):
        raise ValueError("state and accumulator clocks differ")
    return replace(z_state, positions=z_state.positions + acc.value)


# --- coupled engine ---------------------------------------------------------

@dataclass
class ExtinctionReport:
    eta: float
    F_estimate: np.ndarray
    F_prime_estimate: np.ndarray
    offset_at_eta: np.ndarray
    quadrature_tolerance: float

    @property
    def identity_residual(self) -> float:
        return float(np.max(np.abs(self.F_prime_estimate - self.F_estimate - self.offset_at_eta)))


@dataclass
class CoupledRun:
    """Grid trajectories of one replicate; NaN marks entries after extinction."""

    times: np.ndarray
    count: np.ndarray
    mass: np.ndarray
    zbar: np.ndarray
    ybar: np.ndarray
    offset: np.ndarray
    spread_z: np.ndarray
    spread_y: np.ndarray
    coupling_error: np.ndarray
    phi_y: Optional[np.ndarray]
    phi_z: Optional[np.ndarray]
    box_z: Optional[np.ndarray]
    box_y: Optional[np.ndarray]
    weight: np.ndarray
    extinction: Optional[ExtinctionReport] = None
    censored_time: Optional[float] = None
    events: int = 0
    switch_time: Optional[float] = None
    records: Dict[float, dict] = field(default_factory=dict)
    gamma: float = 0.0
    beta: float = 0.0

    @property
    def survived(self) -> bool:
        return self.extinction is None

    @property
    def last_index(self) -> int:
        """Index of the last grid point with living particles."""
        alive = np.nonzero(self.count > 0)[0]
        return int(alive[-1])

    @property
    def ybar_corr(self) -> np.ndarray:
        return self.zbar + self.offset

    @property
    def sup_coupling_error(self) -> float:
        return float(np.nanmax(self.coupling_error))

    def value_at(self, name: str, t: float):
        k = int(np.argmin(np.abs(self.times - t)))
        return getattr(self, name)[k]


class CoupledSystem:
    """Ordinary (exact OU) and interacting (Euler) clouds on one branching tree."""

    def __init__(self, cfg: ValidatedConfig, seed: Optional[int] = None, noise_level: int = 0,
                 capacity: Optional[int] = None):
        self.cfg = cfg
        self.seed = np.uint64(cfg.seed if seed is None else seed)
        self.noise_level = noise_level
        n0 = cfg.particle_count
        d = cfg.d
        gen = np.random.default_rng(int(self.seed))
        pos = initial_positions(cfg.initial, n0, d, gen)
        cap = capacity or max(64, 4 * n0)
        self.Z = np.zeros((cap, d))
        self.Y = np.zeros((cap, d))
        self.AOU = np.zeros((cap, d))
        self.AB = np.zeros((cap, d))
        self.seg = np.zeros(cap)
        self.key = np.zeros(cap, dtype=np.uint64)
        self.pid = np.zeros(cap, dtype=np.int64)
        self.parent = np.full(cap, -1, dtype=np.int64)
        self.birth = np.zeros(cap)
        self.Z[:n0] = pos
        self.Y[:n0] = pos
        self.key[:n0] = crng.particle_keys(int(self.seed), n0)
        self.pid[:n0] = np.arange(n0)
        self.ist = np.array([n0, 0, n0, 0], dtype=np.int64)
        self.fst = np.array([0.0, 0.0, math.nan])
        self.terminal = np.zeros(2 * d)
        self.time = 0.0
        K.draw_first_event(self.ist, self.fst, self.seed, float(cfg.N), float(cfg.beta))

    @property
    def n(self) -> int:
        return int(self.ist[K.I_COUNT])

    @property
    def weight(self) -> float:
        """Mass per particle at the current time."""
        w = 1.0 / self.cfg.N
        if self.ist[K.I_PHASE]:
            w *= math.exp(self.cfg.beta * (self.time - self.fst[K.F_SWITCH]))
        return w

    def _grow(self):
        cap = self.Z.shape[0] * 2
        for name in ("Z", "Y", "AOU", "AB", "seg", "key", "pid", "parent", "birth"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def state(self, which: str = "ordinary") -> PopulationState:
        n = self.n
        pos = (self.Z if which == "ordinary" else self.Y)[:n].copy()
        return PopulationState(
            time=self.time, positions=pos, ids=self.pid[:n].copy(), parent_ids=self.parent[:n].copy(),
            birth_times=self.birth[:n].copy(), keys=self.key[:n].copy(), N=self.cfg.N,
            event_counter=int(self.ist[K.I_EVENTS]), next_id=int(self.ist[K.I_IDS]),
            mass_per_particle=self.weight)

    def step(self, t_hi: float, cell: int, ybar: np.ndarray) -> int:
        """Advance to ``t_hi``; returns a kernel status code."""
        cfg = self.cfg
        law = cfg.offspring
        while True:
            status = K.advance_events(
                self.Z, self.Y, self.AOU, self.AB, self.seg, self.key, self.pid, self.parent,
                self.birth, self.ist, self.fst, self.time, t_hi, cell, self.noise_level, ybar,
                float(cfg.gamma), self.seed, float(cfg.N), float(law.p2), float(cfg.beta),
                int(cfg.particle_cap), self.terminal)
            if status == K.STATUS_CAPACITY:
                self._grow()
                continue
            break
        if status == K.STATUS_EXTINCT:
            return status
        K.finalize_step(self.Z, self.Y, self.AOU, self.AB, self.seg, self.key, self.n,
                        self.time, t_hi, cell, self.noise_level, ybar, float(cfg.gamma))
        self.time = t_hi
        return status


def _box_arrays(boxes, d):
    if not boxes:
        return np.zeros((0, d)), np.zeros((0, d))
    lo = np.array([np.broadcast_to(np.asarray(b[0], float), (d,)) for b in boxes])
    hi = np.array([np.broadcast_to(np.asarray(b[1], float), (d,)) for b in boxes])
    return lo, hi


def coupled_run(cfg: ValidatedConfig, seed: Optional[int] = None, *, noise_level: int = 0,
                phi: str = "none", boxes: Sequence = (), record_times: Sequence[float] = (),
                on_record: Optional[Callable] = None) -> CoupledRun:
    """Run both systems on one branching realization and one noise grid.

    ``on_record(t, Z, Y, run_info)`` is called at each of ``record_times``
    (snapped to the grid) with copies of the two clouds and must return a
    dict stored in ``CoupledRun.records[t]``.
    """
    if phi not in PHI_CODES:
        raise ValueError(f"unknown test function {phi!r}")
    sysm = CoupledSystem(cfg, seed, noise_level)
    d = cfg.d
    gamma = float(cfg.gamma)
    times = time_grid(cfg.t_max, cfg.h)
    nt = times.size
    lo, hi = _box_arrays(boxes, d)
    phi_code = PHI_CODES[phi]

    nan = math.nan
    count = np.zeros(nt, dtype=np.int64)
    mass = np.zeros(nt)
    weight = np.full(nt, nan)
    zbar = np.full((nt, d), nan)
    ybar = np.full((nt, d), nan)
    offset = np.full((nt, d), nan)
    sz = np.full(nt, nan)
    sy = np.full(nt, nan)
    cerr = np.full(nt, nan)
    phi_y = np.full((nt, 3), nan) if phi_code else None
    phi_z = np.full((nt, 3), nan) if phi_code else None
    box_z = np.full((nt, lo.shape[0]), nan) if lo.shape[0] else None
    box_y = np.full((nt, lo.shape[0]), nan) if lo.shape[0] else None

    rec_idx = {}
    for t in record_times:
        k = int(np.argmin(np.abs(times - t)))
        rec_idx.setdefault(k, float(times[k]))
    records: Dict[float, dict] = {}

    zb = np.zeros(d)
    yb = np.zeros(d)
    scal = np.zeros(9)
    bz = np.zeros(lo.shape[0])
    by = np.zeros(lo.shape[0])
    acc = np.zeros(d)

    def observe(k):
        n = sysm.n
        K.observe(sysm.Z, sysm.Y, n, acc, gamma, phi_code, lo, hi, zb, yb, scal, bz, by)
        count[k] = n
        w = sysm.weight
        weight[k] = w
        mass[k] = n * w
        zbar[k] = zb
        ybar[k] = yb
        offset[k] = acc
        sz[k], sy[k], cerr[k] = scal[0], scal[1], scal[2]
        if phi_code:
            phi_y[k] = scal[3:6]
            phi_z[k] = scal[6:9]
        if box_z is not None:
            box_z[k] = bz * w
            box_y[k] = by * w
        if k in rec_idx and on_record is not None:
            records[rec_idx[k]] = on_record(rec_idx[k], sysm.Z[:n].copy(), sysm.Y[:n].copy(),
                                            {"mass": n * w, "zbar": zb.copy(), "ybar": yb.copy(),
                                             "offset": acc.copy()})

    observe(0)
    extinction = None
    censored = None
    for k in range(1, nt):
        t_lo, t_hi = times[k - 1], times[k]
        ybar_start = yb.copy()
        zbar_start = zb.copy()
        status = sysm.step(t_hi, k - 1, ybar_start)
        if status == K.STATUS_EXTINCT:
            eta = float(sysm.fst[K.F_ETA])
            F = sysm.terminal[:d].copy()
            Fp = sysm.terminal[d:].copy()
            dt = eta - t_lo
            acc_eta = acc + gamma * dt * 0.5 * (zbar_start + F)
            alive = np.vstack([zbar[:k], F[None, :]])
            tol = _offset_tolerance(alive, cfg.h, eta, gamma)
            extinction = ExtinctionReport(eta, F, Fp, acc_eta, tol)
            break
        zprev = zb.copy()
        n = sysm.n
        zb[:] = sysm.Z[:n].mean(axis=0)
        acc += gamma * (t_hi - t_lo) * 0.5 * (zprev + zb)
        observe(k)
        if cfg.stop_mass and mass[k] >= cfg.stop_mass and k < nt - 1:
            censored = float(t_hi)
            break

    return CoupledRun(
        times=times, count=count, mass=mass, zbar=zbar, ybar=ybar, offset=offset, spread_z=sz,
        spread_y=sy, coupling_error=cerr, phi_y=phi_y, phi_z=phi_z, box_z=box_z, box_y=box_y,
        weight=weight, extinction=extinction, censored_time=censored,
        events=int(sysm.ist[K.I_EVENTS]),
        switch_time=float(sysm.fst[K.F_SWITCH]) if sysm.ist[K.I_PHASE] else None,
        records=records, gamma=gamma, beta=float(cfg.beta))


def _offset_tolerance(zbar_path: np.ndarray, h: float, t: float, gamma: float) -> float:
    from .stats import trapezoid_error_bound
    return abs(gamma) * trapezoid_error_bound(zbar_path, h, t)
