import math

import numpy as np
import pytest
from scipy import stats

from souproc.branching import (ExtinctError, apply_branch, detect_extinction, init_population,
                               next_branch_event, run_mass_only)
from souproc.model import (InitialMeasure, Mode, SimConfig, feller_mean, feller_variance,
                           validate_config)

from conftest import make_cfg


def _mass_cfg(**kw):
    base = dict(beta=0.5, N=100, h=0.01, t_max=5.0, mode=Mode.MASS_ONLY)
    base.update(kw)
    return validate_config(SimConfig(**base))


def test_init_point_mass():
    st = init_population(InitialMeasure(1.0, "point"), make_cfg(N=100))
    assert st.count == 100 and np.all(st.positions == 0)
    assert st.total_mass == pytest.approx(1.0)
    assert detect_extinction(st) is None


def test_init_gaussian_clt_bound():
    st = init_population(InitialMeasure(1.0, "gaussian", (0.0,), 1.0), make_cfg(N=100),
                         np.random.default_rng(0))
    assert st.count == 100
    assert abs(st.positions.mean()) <= 3 / math.sqrt(100)


def test_init_count_from_m0():
    st = init_population(InitialMeasure(2.0, "point"), make_cfg(N=50))
    assert st.count == 100


def test_init_points_cycled():
    st = init_population(InitialMeasure(1.0, "points", points=((1.0,), (2.0,))), make_cfg(N=4))
    assert st.positions[:, 0].tolist() == [1.0, 2.0, 1.0, 2.0]


@pytest.mark.parametrize("count,N", [(100, 100), (1, 1)])
def test_next_branch_event_mean(count, N):
    st = init_population(InitialMeasure(count / N, "point"), make_cfg(N=N))
    gen = np.random.default_rng(3)
    waits = np.array([next_branch_event(st, gen)[0] for _ in range(100_000)])
    target = 1.0 / (N * count)
    assert abs(waits.mean() - target) < 3 * waits.std(ddof=1) / math.sqrt(waits.size)
    ids = {next_branch_event(st, gen)[1] for _ in range(500)}
    assert ids <= set(st.ids.tolist())


def test_apply_branch_death_and_birth():
    cfg = make_cfg(N=1)
    st = init_population(InitialMeasure(1.0, "point", (3.0,)), cfg)
    dead = apply_branch(st, 0, 0, event_time=3.21)
    assert dead.count == 0 and detect_extinction(dead) == 3.21
    with pytest.raises(ExtinctError):
        next_branch_event(dead, np.random.default_rng(0))
    born = apply_branch(st, 0, 2, event_time=0.5)
    assert born.count == 2 and np.all(born.positions == 3.0)
    assert born.parent_ids.tolist() == [0, 0] and born.birth_times.tolist() == [0.5, 0.5]
    assert born.keys[0] != born.keys[1]


def test_apply_branch_mass_arithmetic():
    st = init_population(InitialMeasure(1.0, "point"), make_cfg(N=100))
    assert st.total_mass == pytest.approx(1.00)
    assert apply_branch(st, 5, 2).total_mass == pytest.approx(1.01)
    with pytest.raises(ValueError):
        apply_branch(st, 5, 1)
    with pytest.raises(KeyError):
        apply_branch(st, 999, 2)


def test_run_mass_only_requires_mode():
    with pytest.raises(ValueError):
        run_mass_only(make_cfg(), np.random.default_rng(0))


def test_mass_counts_exact():
    traj = run_mass_only(_mass_cfg(), np.random.default_rng(1), np.arange(6.0))
    assert traj.counts.dtype == np.int64
    assert np.array_equal(traj.mass, traj.counts / 100)


@pytest.mark.parametrize("method", ["exact", "gillespie"])
def test_feller_moments(method):
    cfg = _mass_cfg(N=50, t_max=2.0)
    times = np.array([0.0, 1.0, 2.0])
    gen = np.random.default_rng(11)
    R = 4000 if method == "exact" else 1500
    M = np.array([run_mass_only(cfg, gen, times, method).mass for _ in range(R)])
    for k, t in enumerate(times[1:], start=1):
        mean, var = feller_mean(1.0, 0.5, t), feller_variance(1.0, 0.5, t)
        assert abs(M[:, k].mean() - mean) < 4 * math.sqrt(var / R)
        # variance of the sample variance via the fourth moment
        se_var = M[:, k].var() * math.sqrt(2.0 / R) * 2
        assert abs(M[:, k].var(ddof=1) - var) < 4 * se_var


def test_exact_matches_gillespie():
    cfg = _mass_cfg(N=20, t_max=3.0)
    times = np.array([0.0, 1.0, 3.0])
    gen = np.random.default_rng(5)
    a = np.array([run_mass_only(cfg, gen, times, "exact").mass[-1] for _ in range(3000)])
    b = np.array([run_mass_only(cfg, gen, times, "gillespie").mass[-1] for _ in range(3000)])
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_extinction_time_inside_last_interval():
    cfg = _mass_cfg(N=5, t_max=20.0)
    times = np.arange(0.0, 21.0)
    gen = np.random.default_rng(2)
    seen = 0
    for _ in range(300):
        tr = run_mass_only(cfg, gen, times)
        if tr.extinct:
            seen += 1
            k = int(np.searchsorted(times, tr.extinction_time))
            assert tr.counts[k - 1] > 0 and np.all(tr.counts[k:] == 0)
    assert seen > 50


def test_extinction_time_law_matches_gillespie():
    # short horizon keeps surviving Gillespie runs small
    cfg = _mass_cfg(N=5, t_max=6.0)
    times = np.array([0.0, 6.0])
    gen = np.random.default_rng(8)
    ex = [run_mass_only(cfg, gen, times, "exact").extinction_time for _ in range(2000)]
    gi = [run_mass_only(cfg, gen, times, "gillespie").extinction_time for _ in range(2000)]
    ex = np.array([e for e in ex if e is not None])
    gi = np.array([e for e in gi if e is not None])
    assert stats.ks_2samp(ex, gi).pvalue > 1e-3
