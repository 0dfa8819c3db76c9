import math

import numpy as np
import pytest

from souproc.model import (ConfigError, GaussianSpec, InitialMeasure, Mode, SimConfig,
                           extinction_probability, feller_mean, feller_variance,
                           normalized_mass_laplace, offspring_probabilities, stationary_law,
                           survival_probability, time_grid, validate_config)


def test_validate_reference_config():
    cfg = validate_config(SimConfig(d=1, gamma=1.0, beta=0.5, N=100, h=0.01, t_max=10.0))
    assert cfg.particle_count == 100
    assert cfg.n_steps == 1000
    assert cfg.gamma == 1.0 and cfg.grid[-1] == 10.0


def test_validate_rejects_zero_step():
    with pytest.raises(ConfigError, match="step must be positive"):
        validate_config(SimConfig(h=0.0))


def test_validate_rejects_zero_particles():
    with pytest.raises(ConfigError, match="initial particle count rounds to zero"):
        validate_config(SimConfig(N=100, initial=InitialMeasure(m0=0.005)))


def test_rounding_warning():
    with pytest.warns(UserWarning, match="rounded"):
        validate_config(SimConfig(N=10, initial=InitialMeasure(m0=0.25)))


@pytest.mark.parametrize("kw", [dict(d=0), dict(N=0), dict(beta=0.0), dict(gamma=math.inf),
                                dict(t_max=0.001), dict(Q=0), dict(particle_cap=-1)])
def test_validate_rejects(kw):
    with pytest.raises(ConfigError):
        validate_config(SimConfig(**kw))


def test_initial_dimension_checked():
    with pytest.raises(ConfigError, match="dimension"):
        validate_config(SimConfig(d=2, initial=InitialMeasure(kind="point", mean=(1.0,))))
    with pytest.raises(ConfigError):
        InitialMeasure(m0=0.0)
    with pytest.raises(ConfigError):
        InitialMeasure(kind="cloud")


def test_m0_two_n_fifty():
    assert validate_config(SimConfig(N=50, initial=InitialMeasure(m0=2.0))).particle_count == 100


def test_stationary_law():
    assert stationary_law(1.0, 1) == GaussianSpec((0.0,), 0.5)
    s = stationary_law(0.5, 3)
    assert s.mean == (0.0, 0.0, 0.0) and s.variance_per_coordinate == 1.0
    with pytest.raises(ConfigError):
        stationary_law(0.0, 1)
    with pytest.raises(ConfigError):
        stationary_law(-1.0, 1)


def test_extinction_probability_values():
    assert extinction_probability(0.5, 1.0) == pytest.approx(0.367879, abs=5e-7)
    assert extinction_probability(1.0, 0.25) == pytest.approx(0.606531, abs=5e-7)
    assert extinction_probability(0.5, 1e6) == 0.0
    assert survival_probability(0.5, 1.0) == pytest.approx(1 - math.exp(-1))


def test_offspring_law():
    law = offspring_probabilities(0.5, 100)
    assert law.p2 == pytest.approx(0.5025) and law.p0 == pytest.approx(0.4975)
    assert law.per_particle_rate == 100
    crit = offspring_probabilities(0.0, 7)
    assert crit.p0 == crit.p2 == 0.5
    # mass drift N (p2 - p0) / N * M = beta M
    assert law.per_particle_rate * (law.mean - 1.0) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        offspring_probabilities(0.5, 0)


def test_per_particle_extinction_matches_formula():
    # discrete-chain extinction (p0/p2)^(N m0) versus the diffusion limit
    q = offspring_probabilities(0.5, 100).extinction_probability_per_particle
    assert q ** 100 == pytest.approx(0.368, abs=5e-4)
    assert abs(q ** 100 - extinction_probability(0.5, 1.0)) < 2e-3


def test_feller_moments_and_laplace():
    t = np.array([0.0, 1.0, 5.0])
    assert np.allclose(feller_mean(1.0, 0.5, t), np.exp(0.5 * t))
    assert feller_variance(1.0, 0.5, 0.0) == 0.0
    assert feller_variance(2.0, 0.5, 1.0) == pytest.approx(4 * (math.e - math.exp(0.5)))
    assert normalized_mass_laplace(1.0, 0.5, 1.0, 0.0) == pytest.approx(math.exp(-1.0))
    # t -> infinity gives the Laplace transform of W
    far = normalized_mass_laplace(1.0, 0.5, 1.0, 200.0)
    assert far == pytest.approx(math.exp(-2 * 0.5 / (2 * 0.5 + 1.0)))


def test_time_grid_ends_exactly():
    g = time_grid(1.0, 0.3)
    assert g[-1] == 1.0 and np.allclose(g[:-1], [0.0, 0.3, 0.6, 0.9])
    g = time_grid(12.0, 0.01)
    assert g.size == 1201 and g[-1] == 12.0


def test_with_revalidates():
    cfg = validate_config(SimConfig())
    assert cfg.with_(h=0.005).n_steps == 2 * cfg.n_steps
    with pytest.raises(ConfigError):
        cfg.with_(h=-1.0)
    assert cfg.with_(mode="mass_only").mode is Mode.MASS_ONLY


@pytest.mark.parametrize("beta,N", [(0.5, 100), (1.0, 10), (0.5, 2000)])
def test_offspring_moments(beta, N):
    law = offspring_probabilities(beta, N)
    assert law.p0 + law.p2 == 1.0
    assert law.mean == pytest.approx(1 + beta / N, rel=1e-14)
    assert abs(law.variance - 1) <= 2 * beta / N + (beta / N) ** 2
