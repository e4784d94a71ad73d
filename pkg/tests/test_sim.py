import math

import numpy as np
import pytest
from scipy.stats import binom

from ghzrate.analytic import (
    expected_min_normals,
    moments_trajectory,
    multiplexing_bounds,
    simplified_stationary_moments,
)
from ghzrate.chain import exact_rate
from ghzrate.core import NetworkParams
from ghzrate.sim import (
    SimConfig,
    _matched_mixture,
    replica_seeds,
    run_full,
    run_simplified,
    simplified_trajectories,
)

FAST = SimConfig(rounds=20_000, burn_in=500, replicas=16, seed=20240611)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(rounds=10, burn_in=10)
    with pytest.raises(ValueError):
        SimConfig(replicas=0)
    cfg = SimConfig().resolved()
    assert cfg.seed is not None
    assert cfg.resolved() is cfg


def test_replica_seeds_deterministic():
    a = replica_seeds(7, 5)
    assert a == replica_seeds(7, 5)
    assert len(set(a)) == 5
    assert replica_seeds(7, 6)[:5] == a


def test_full_reproducible():
    params = NetworkParams(3, 2, 0.2)
    a = run_full(params, FAST)
    b = run_full(params, FAST)
    np.testing.assert_array_equal(a.replica_means, b.replica_means)
    np.testing.assert_array_equal(a.histogram, b.histogram)
    assert a.L_mean == b.L_mean
    c = run_full(params, SimConfig(FAST.rounds, FAST.burn_in, FAST.replicas, FAST.seed, workers=1))
    np.testing.assert_array_equal(a.replica_means, c.replica_means)


def test_full_result_shape():
    r = run_full(NetworkParams(3, 4, 0.3), FAST)
    assert r.histogram.shape == (5,)
    assert r.histogram.sum() == pytest.approx(1.0)
    assert 0 <= r.L_mean <= 4
    assert r.rate == pytest.approx(r.L_mean / 4)
    assert r.ci_half_width == pytest.approx(1.96 * r.stderr)
    assert r.occupancy_mean.shape == (3,)
    # Party symmetry of the occupation means.
    assert np.ptp(r.occupancy_mean) < 0.05


def test_p0_and_p1():
    assert run_full(NetworkParams(3, 2, 0.0), FAST).L_mean == 0.0
    r = run_full(NetworkParams(3, 2, 1.0), FAST)
    assert r.L_mean == 2.0 and r.stderr == 0.0


def test_single_party_is_pm():
    r = run_full(NetworkParams(1, 4, 0.25), FAST)
    assert abs(r.L_mean - 1.0) <= 3 * r.stderr


@pytest.mark.parametrize("n,m,p", [(2, 1, 0.1), (2, 3, 0.5), (3, 2, 0.05), (4, 1, 0.1), (2, 10, 0.1)])
def test_full_matches_exact(n, m, p):
    params = NetworkParams(n, m, p)
    r = run_full(params, FAST)
    exact = exact_rate(params).L_mean
    assert abs(r.L_mean - exact) <= 3 * r.stderr


@pytest.mark.parametrize("n,m,p", [(3, 5, 0.1), (6, 2, 0.5)])
def test_full_respects_bounds(n, m, p):
    r = run_full(NetworkParams(n, m, p), FAST)
    b = multiplexing_bounds(n, m, p)
    assert b.lower - 3 * r.stderr <= r.L_mean <= b.upper + 3 * r.stderr


# -- decoupled model ---------------------------------------------------------


@pytest.mark.parametrize("t", [1.3, 2.5, 3.99, 7.01, 12.5])
@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_matched_mixture_moments(t, p):
    w, r = _matched_mixture.py_func(t, p)
    base = math.floor(t)
    ks = np.arange(base + 2)
    pmf = (1 - w) * binom.pmf(ks, base, r) + w * binom.pmf(ks, base + 1, r)
    mean = (ks * pmf).sum()
    var = (ks**2 * pmf).sum() - mean**2
    assert 0 <= w <= 1 and 0 <= r <= 1
    if r < 1:
        assert mean == pytest.approx(p * t, rel=1e-12)
        assert var == pytest.approx(p * (1 - p) * t, rel=1e-10)


def test_simplified_validation():
    params = NetworkParams(2, 5, 0.1)
    with pytest.raises(ValueError):
        run_simplified(params, -1.0, FAST)
    with pytest.raises(ValueError):
        run_simplified(params, 0.3, FAST, rounding="floor")


def _check_stationary(m, p, l, rounding="matched"):
    r = run_simplified(NetworkParams(1, m, p), l, SimConfig(50_000, 1_000, 16, seed=99), rounding=rounding)
    target = simplified_stationary_moments(m, p, l)
    mu = float(r.replica_means.mean())
    return r, target, mu


@pytest.mark.parametrize("m,p,l", [(5, 0.1, 0.3), (20, 0.1, 1.0), (8, 0.25, 2.0)])
def test_simplified_stationary_moments(m, p, l):
    r, target, mu = _check_stationary(m, p, l)
    assert not r.diverged
    assert abs(mu - target.mu) <= 3 * r.mu_stderr
    assert abs(r.occupancy_var - target.sigma2) <= 3 * r.sigma2_stderr


def test_simplified_l_equals_pm():
    r, target, mu = _check_stationary(10, 0.2, 2.0)
    assert target.mu == pytest.approx(0.0)
    assert abs(mu) <= 3 * r.mu_stderr
    assert abs(r.occupancy_var - target.sigma2) <= 3 * r.sigma2_stderr


def test_nearest_rounding_is_biased():
    r, target, mu = _check_stationary(5, 0.1, 0.3, rounding="nearest")
    assert abs(mu - target.mu) > 3 * r.mu_stderr


def test_simplified_divergence_flag():
    # The mean settles at m - l/p, so the -50 m guard trips only once l > 51 p m.
    r = run_simplified(NetworkParams(2, 3, 0.1), 18.0, SimConfig(10_000, 100, 2, seed=5))
    assert r.diverged
    ok = run_simplified(NetworkParams(2, 3, 0.1), 0.5, SimConfig(10_000, 100, 2, seed=5))
    assert not ok.diverged


def test_simplified_reproducible():
    params = NetworkParams(3, 5, 0.1)
    a = run_simplified(params, 0.3, FAST)
    b = run_simplified(params, 0.3, FAST)
    np.testing.assert_array_equal(a.replica_means, b.replica_means)
    assert a.occupancy_var == b.occupancy_var


@pytest.mark.parametrize("n,m,p,l", [(5, 20, 0.1, 1.0), (10, 50, 0.1, 2.0)])
def test_min_occupancy_normal_approximation(n, m, p, l):
    r = run_simplified(NetworkParams(n, m, p), l, SimConfig(20_000, 1_000, 8, seed=1))
    mom = simplified_stationary_moments(m, p, l)
    expected = expected_min_normals(mom.mu, math.sqrt(mom.sigma2), n)
    assert abs(r.min_occupancy_mean - expected) / expected < 0.05


@pytest.mark.parametrize("m,p,l", [(20, 0.1, 1.0), (5, 0.1, 0.3)])
def test_trajectory_tracks_recurrence(m, p, l):
    paths = 20_000
    means, variances = simplified_trajectories(m, p, l, 100, paths, seed=11)
    ref = moments_trajectory(m, p, l, 100)
    for k in (1, 5, 20, 100):
        mom = ref[k]
        se_mu = math.sqrt(mom.sigma2 / paths)
        assert abs(means[k] - mom.mu) <= 3 * se_mu + 1e-12
        # Normal-theory standard error of a sample variance.
        se_var = mom.sigma2 * math.sqrt(2.0 / (paths - 1))
        assert abs(variances[k] - mom.sigma2) <= 3 * se_var + 1e-12
