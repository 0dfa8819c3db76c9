"""Deterministic invariant checks (no statistics), shared by the CLI and tests."""
from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np

from ..branching import apply_branch, init_population, run_mass_only
from ..dynamics import (OffsetAccumulator, correspondence_transform, coupled_run,
                        interacting_em_step, ordinary_step, ou_exact_step, ou_sigma)
from ..model import InitialMeasure, Mode, SimConfig, validate_config
from ..stats import EmpiricalMeasure, bl_distance_1d, center_of_mass

CHECKS: Dict[str, Callable[[int], bool]] = {}


def check(fn):
    CHECKS[fn.__name__] = fn
    return fn


def _emp(gen, n, loc=0.0, scale=1.0):
    return EmpiricalMeasure(loc + scale * gen.standard_normal(n)).normalized()


def _small_cfg(**kw):
    base = dict(d=1, gamma=1.0, beta=0.5, N=30, h=0.01, t_max=1.0, mode=Mode.COUPLED,
                initial=InitialMeasure(1.0, "gaussian", (0.3,), 1.0))
    base.update(kw)
    return validate_config(SimConfig(**base))


@check
def bl_metric_axioms(seed: int) -> bool:
    gen = np.random.default_rng(seed)
    for _ in range(20):
        a, b, c = (_emp(gen, int(gen.integers(1, 12)), gen.normal(0, 2), gen.uniform(0.1, 3))
                   for _ in range(3))
        dab, dba = bl_distance_1d(a, b), bl_distance_1d(b, a)
        if bl_distance_1d(a, a) != 0.0 or abs(dab - dba) > 1e-12 or dab < 0 or dab > 2.0:
            return False
        if dab > bl_distance_1d(a, c) + bl_distance_1d(c, b) + 1e-12:
            return False
    return True


@check
def bl_dirac_pair(seed: int) -> bool:
    zero = EmpiricalMeasure(np.zeros(1)).normalized()
    for x in (-5.0, -2.0, -0.3, 0.0, 0.7, 1.99, 2.0, 3.5):
        if abs(bl_distance_1d(zero, EmpiricalMeasure(np.array([x])).normalized()) - min(abs(x), 2.0)) > 1e-15:
            return False
    return True


@check
def bl_cap(seed: int) -> bool:
    gen = np.random.default_rng(seed)
    return bl_distance_1d(_emp(gen, 50), _emp(gen, 50, loc=100.0)) == 2.0


@check
def gamma_zero_com_equal(seed: int) -> bool:
    run = coupled_run(_small_cfg(gamma=0.0), seed)
    k = run.last_index + 1
    return bool(np.array_equal(run.zbar[:k], run.ybar[:k]))


@check
def single_particle_zero_drift(seed: int) -> bool:
    state = init_population(InitialMeasure(1.0, "point", (2.5,)), _small_cfg(N=1))
    noise = np.array([[0.37]])
    out = interacting_em_step(state, 3.0, 0.1, noise)
    return bool(out.positions[0, 0] == 2.5 + math.sqrt(0.1) * 0.37)


@check
def interacting_translation_equivariance(seed: int) -> bool:
    a = 1.75
    base = _small_cfg(gamma=1.3)
    moved = base.with_(initial=InitialMeasure(1.0, "gaussian", (0.3 + a,), 1.0))
    r0, r1 = coupled_run(base, seed), coupled_run(moved, seed)
    k = r0.last_index + 1
    return bool(np.allclose(r1.ybar[:k] - r0.ybar[:k], a, rtol=0, atol=1e-9))


@check
def ordinary_not_equivariant(seed: int) -> bool:
    a = 1.75
    base = _small_cfg(gamma=1.3)
    moved = base.with_(initial=InitialMeasure(1.0, "gaussian", (0.3 + a,), 1.0))
    r0, r1 = coupled_run(base, seed), coupled_run(moved, seed)
    k = r0.last_index
    return bool(abs(r1.zbar[k, 0] - r0.zbar[k, 0] - a) > 1e-3)


@check
def ou_step_formulas(seed: int) -> bool:
    ok = True
    for g in (1.0, -0.4, 2.5):
        h = 0.3
        ok &= math.isclose(ou_exact_step([2.0], g, h, [0.0])[0], 2.0 * math.exp(-g * h), rel_tol=1e-15)
        ok &= math.isclose(ou_sigma(g, h) ** 2, -math.expm1(-2 * g * h) / (2 * g), rel_tol=1e-14)
        # affine in (position, noise)
        x, z = np.array([0.4, -1.1]), np.array([0.9, 0.2])
        lhs = ou_exact_step(x, g, h, z)
        rhs = math.exp(-g * h) * x + ou_sigma(g, h) * z
        ok &= bool(np.allclose(lhs, rhs, rtol=1e-15, atol=0))
    ok &= math.isclose(ou_sigma(0.0, 0.2) ** 2, 0.2, rel_tol=1e-15)
    # continuous across the switch between the series and the closed form
    ok &= math.isclose(ou_sigma(0.99e-8 / 0.2, 0.2), ou_sigma(1.01e-8 / 0.2, 0.2), rel_tol=1e-9)
    return bool(ok)


@check
def ordinary_zero_noise_scaling(seed: int) -> bool:
    st = init_population(InitialMeasure(1.0, "points", points=((1.5,), (-2.0,))), _small_cfg(N=2))
    z = np.zeros((2, 1))
    a = ordinary_step(st, 0.7, 0.2, z).positions[:, 0]
    b = ordinary_step(st, -0.7, 0.2, z).positions[:, 0]
    return bool(np.allclose(a, [1.5 * math.exp(-0.14), -2.0 * math.exp(-0.14)], rtol=1e-15)
                and np.allclose(np.abs(b), [1.5 * math.exp(0.14), 2.0 * math.exp(0.14)], rtol=1e-15))


@check
def two_particle_em_drift(seed: int) -> bool:
    st = init_population(InitialMeasure(1.0, "points", points=((1.0,), (-1.0,))), _small_cfg(N=2))
    out = interacting_em_step(st, 1.0, 0.1, np.zeros((2, 1)))
    return bool(np.allclose(out.positions[:, 0], [0.9, -0.9], rtol=0, atol=1e-15))


@check
def mass_bookkeeping(seed: int) -> bool:
    cfg = _small_cfg(N=50, t_max=2.0)
    run = coupled_run(cfg, seed)
    k = run.last_index + 1
    if not np.allclose(run.mass[:k] * cfg.N, run.count[:k], rtol=1e-12, atol=0):
        return False
    mcfg = cfg.with_(mode=Mode.MASS_ONLY)
    traj = run_mass_only(mcfg, np.random.default_rng(seed), method="gillespie")
    return bool(np.array_equal(traj.mass, traj.counts / mcfg.N) and np.all(traj.counts >= 0)
                and (np.all(traj.counts[1:][traj.times[1:] > traj.extinction_time] == 0)
                     if traj.extinct else True))


@check
def branch_keeps_positions(seed: int) -> bool:
    cfg = _small_cfg(N=3)
    st = init_population(InitialMeasure(1.0, "points", points=((3.0,), (-1.0,), (0.5,))), cfg)
    two = apply_branch(st, 0, 2, 0.1)
    zero = apply_branch(two, 1, 0, 0.2)
    children = two.positions[two.parent_ids == 0, 0]
    return bool(np.all(children == 3.0) and two.count == 4 and zero.count == 3
                and abs(two.total_mass - (st.total_mass + 1 / 3)) < 1e-15
                and set(zero.positions[:, 0]) == {3.0, 0.5})


@check
def correspondence_shift(seed: int) -> bool:
    gen = np.random.default_rng(seed)
    st = init_population(InitialMeasure(1.0, "gaussian", (0.0,), 1.0), _small_cfg(N=40), gen)
    same = correspondence_transform(st, OffsetAccumulator.zero(1))
    acc = OffsetAccumulator(np.array([0.8]), 0.0)
    moved = correspondence_transform(st, acc)
    return bool(np.array_equal(same.positions, st.positions)
                and np.allclose(center_of_mass(moved), center_of_mass(st) + 0.8, atol=1e-14)
                and np.array_equal(moved.ids, st.ids))


@check
def constant_phi_residual_zero(seed: int) -> bool:
    from .scenarios import martingale_residual
    run = coupled_run(_small_cfg(N=40, t_max=2.0), seed, phi="constant")
    return all(martingale_residual(run, "constant", t)[0] == 0.0 for t in (0.5, 1.0, 2.0))


@check
def deterministic_replay(seed: int) -> bool:
    cfg = _small_cfg(N=40, t_max=2.0, gamma=-0.3)
    a, b = coupled_run(cfg, seed), coupled_run(cfg, seed)
    return (a.events == b.events
            and all(np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)
                    for f in ("count", "zbar", "ybar", "offset", "coupling_error")))


@check
def parallel_determinism(seed: int) -> bool:
    from . import run_scenario
    from .scenarios import make_scenario
    scn = make_scenario("volterra_identity", _small_cfg(N=20, t_max=1.0, seed=seed), replicates=6)
    one = run_scenario(scn, parallelism=1)
    many = run_scenario(scn, parallelism=4)
    return [s.to_dict() for s in one.summaries] == [s.to_dict() for s in many.summaries]


def run_invariants(seed: int = 0) -> Dict[str, bool]:
    return {name: bool(fn(seed)) for name, fn in CHECKS.items()}
