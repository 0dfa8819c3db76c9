import json
import math

import numpy as np
import pytest

from souproc.dynamics import coupled_run
from souproc.experiments import (KINDS, PassRule, ReplicateSummary, aggregate, make_scenario,
                                 run_replicates, run_scenario)
from souproc.experiments.core import ReplicateError, condition, survival_guard
from souproc.experiments.invariants import CHECKS, run_invariants
from souproc.experiments.scenarios import (geometric_snapshots, martingale_residual,
                                           volterra_tolerance)
from souproc.model import ConfigError, InitialMeasure, Mode, extinction_probability
from souproc.stats import volterra_residual

from conftest import make_cfg


def _signature(result):
    return json.dumps([s.to_dict() for s in result.summaries], sort_keys=True)


# --- rules and records ------------------------------------------------------------------

@pytest.mark.parametrize("cmp,target,value,ok", [
    ("<=", 1.0, 1.0, True), ("<", 1.0, 1.0, False), (">=", 2, 3, True), (">", 2, 2, False),
    ("in", (0.8, 1.2), 1.0, True), ("in", (0.8, 1.2), 1.3, False)])
def test_pass_rule(cmp, target, value, ok):
    assert PassRule("x", cmp, target).check(value) is ok


def test_pass_rule_within_and_missing():
    r = PassRule("x", "within", 1.0, 0.1)
    assert r.check(1.05) and not r.check(1.2)
    assert not r.check(None) and not r.check(math.nan)
    assert PassRule.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        PassRule("x", "~", 1.0)


def test_summary_roundtrip_handles_numpy():
    s = ReplicateSummary(index=3, seed=9, survived=True, eta=None, zbar=[np.float64(0.5)],
                         values={"v": np.float64(1.25), "bad": math.nan})
    d = json.loads(json.dumps(s.to_dict()))
    back = ReplicateSummary.from_dict(d)
    assert back.values["v"] == 1.25 and back.values["bad"] is None
    assert back.zbar == [0.5]


# --- replicate runner ------------------------------------------------------------------------

def _small(name, replicates, **kw):
    base = dict(N=20, h=0.02, t_max=2.0)
    base.update(kw)
    return make_scenario(name, make_cfg(**base), replicates)


def test_single_replicate_equals_direct_run():
    scn = _small("volterra_identity", 1, seed=77)
    summaries, traj = run_replicates(scn, KINDS[scn.name].replicate, 1)
    run = coupled_run(scn.cfg, scn.seeds()[0])
    assert scn.seeds() == [77]
    assert np.array_equal(traj[0].zbar, run.zbar, equal_nan=True)
    assert np.array_equal(traj[0].mass[: run.last_index + 1], run.mass[: run.last_index + 1])


def test_parallelism_does_not_change_output():
    scn = _small("martingale_problem", 12, seed=5)
    a = run_scenario(scn, parallelism=1)
    b = run_scenario(scn, parallelism=4)
    assert _signature(a) == _signature(b)
    assert a.statistics == b.statistics
    assert all(np.array_equal(x.mass, y.mass, equal_nan=True)
               for x, y in zip(a.trajectories, b.trajectories))


def test_survival_conditioning_fraction():
    scn = make_scenario("extinction_probability", make_cfg(N=200, t_max=30.0), 100)
    res = run_scenario(scn)
    kept = condition(res.summaries, "survival")
    p = 1 - extinction_probability(0.5, 1.0)
    assert abs(len(kept) / 100 - p) <= 3 * math.sqrt(p * (1 - p) / 100)
    lost = condition(res.summaries, "extinction")
    assert len(kept) + len(lost) == 100 and not set(s.index for s in kept) & set(s.index for s in lost)


def test_censored_counted_as_survived():
    scn = _small("extinction_point", 40, t_max=20.0, stop_mass=3.0, seed=100)
    res = run_scenario(scn)
    st = res.statistics
    assert st["n_survived"] + st["n_extinct"] == 40
    assert st["n_censored"] > 0
    assert all(s.survived for s in res.summaries if s.censored)


def test_replicate_errors_carry_context():
    scn = _small("volterra_identity", 2)

    def boom(scenario, i, seed):
        raise RuntimeError("bad")

    with pytest.raises(ReplicateError) as info:
        run_replicates(scn, boom, 1)
    assert info.value.index == 0 and info.value.seed == scn.seeds()[0]


def test_aggregate_reproduces_from_serialized():
    res = run_scenario(_small("martingale_problem", 6))
    again = aggregate(res.scenario, [ReplicateSummary.from_dict(json.loads(json.dumps(s.to_dict())))
                                     for s in res.summaries])
    assert again.verdicts == res.verdicts and again.statistics == res.statistics


def test_survival_guard_values():
    ss = [ReplicateSummary(index=i, seed=i, survived=i % 3 != 0) for i in range(30)]
    g = survival_guard(ss, 0.5, 1.0)
    assert g["n_survived"] == 20 and g["n_extinct"] == 10
    assert g["survival_expected"] == pytest.approx(1 - math.exp(-1))


# --- scenario construction -------------------------------------------------------------------

def test_make_scenario_validation():
    with pytest.raises(ConfigError, match="unknown scenario"):
        make_scenario("nope", make_cfg(), 1)
    with pytest.raises(ConfigError, match="unknown parameter"):
        make_scenario("volterra_identity", make_cfg(), 1, params={"foo": 1})
    with pytest.raises(ConfigError):
        make_scenario("attractive_convergence", make_cfg(gamma=-0.2), 1)
    with pytest.raises(ConfigError):
        make_scenario("martingale_problem", make_cfg(), 1, params={"phi": "sin"})
    with pytest.warns(UserWarning):
        make_scenario("repelling_com", make_cfg(gamma=-1.0), 1)
    scn = make_scenario("mass_martingale", make_cfg(), 3)
    assert scn.cfg.mode is Mode.MASS_ONLY and scn.gating


def test_registry_covers_criteria():
    crit = sorted(k.criterion for k in KINDS.values() if k.criterion)
    assert crit == list(range(1, 10))
    assert all(not k.gating for k in KINDS.values() if k.criterion is None)


# --- scenario helpers --------------------------------------------------------------------------

def test_geometric_snapshots():
    s = geometric_snapshots(4.0, 3)
    assert s.tolist() == [0.0, 2.0, 3.0, 3.5]


def test_constant_phi_residual_is_zero():
    run = coupled_run(make_cfg(N=30, t_max=2.0), 4, phi="constant")
    for t in (0.5, 1.0, 2.0):
        n_hat, qv = martingale_residual(run, "constant", t)
        assert n_hat == 0.0 and abs(qv) < 1e-15


def test_volterra_on_single_run():
    cfg = make_cfg(N=40, h=0.01, t_max=3.0)
    run = coupled_run(cfg, 9)
    k = run.last_index + 1
    t, zb, yc = run.times[:k], run.zbar[:k], run.ybar_corr[:k]
    tol = volterra_tolerance(t, zb, yc, cfg.gamma)
    res = np.abs(volterra_residual(t, zb, yc, cfg.gamma)).max(axis=1)
    assert np.all(res <= tol + 1e-14)


def test_invariants_all_hold():
    for seed in (0, 1):
        out = run_invariants(seed)
        assert set(out) == set(CHECKS)
        assert all(out.values()), {k: v for k, v in out.items() if not v}


# --- diagnostics execute and report -------------------------------------------------------------

@pytest.mark.parametrize("name,kw", [
    ("local_limit", dict(gamma=-0.3, beta=1.0)),
    ("local_extinction", dict(gamma=-1.2, beta=1.0)),
    ("conjecture_scan", dict(gamma=-0.2, beta=1.0)),
])
def test_diagnostics_emit_reports(name, kw):
    cfg = make_cfg(N=20, h=0.05, t_max=4.0, particle_cap=400,
                   initial=InitialMeasure(1.0, "point"), **kw)
    params = {"times": [2.0, 4.0]} if name != "conjecture_scan" else {}
    res = run_scenario(make_scenario(name, cfg, 4, params=params))
    assert not res.scenario.gating and res.verdicts == [] and res.passed
    assert res.statistics["n_replicates"] == 4


def test_symmetric_boxes_ratio_near_one():
    cfg = make_cfg(gamma=-0.3, beta=1.0, N=30, h=0.05, t_max=3.0, particle_cap=600,
                   initial=InitialMeasure(1.0, "point"))
    res = run_scenario(make_scenario("local_limit", cfg, 12,
                                     params={"boxes": [[-1.0, 0.0], [0.0, 1.0]], "times": [3.0]}))
    r = res.statistics["ratio@3"]
    assert r["n"] > 0 and r["ci95"][0] < 1.0 < r["ci95"][1]
