import math

import numpy as np
import pytest
from scipy import stats

from multigibbs.model import CovariateField, ModelSpec, ThetaLayout, neighbour_counts
from multigibbs.pattern import MultiTypePattern, Window, pairwise_distance
from multigibbs.simulate import (
    GibbsSampler,
    ThomasSpec,
    sim_gibbs_fixed_n,
    sim_ipp,
    sim_poisson,
    sim_thomas,
    substream,
)

from conftest import UNIT, as_points, random_config
from oracles import log_density, translation_k_direct


def test_substreams_reproducible_and_distinct():
    a = substream(7, "exp1", 3).random(5)
    assert np.array_equal(a, substream(7, "exp1", 3).random(5))
    assert not np.array_equal(a, substream(7, "exp1", 4).random(5))
    assert not np.array_equal(a, substream(8, "exp1", 3).random(5))


def test_poisson_counts_and_empty():
    rng = np.random.default_rng(0)
    assert sim_poisson(UNIT, rng, n=0).shape == (0, 2)
    assert sim_ipp(UNIT, CovariateField.on_window(UNIT, np.ones((2, 2))), 0, rng).shape == (0, 2)
    xy = sim_poisson(Window(2, 4, 1, 2), rng, n=50)
    assert np.all(Window(2, 4, 1, 2).contains(xy))


def test_constant_field_uniformity():
    field = CovariateField.on_window(UNIT, np.full((3, 3), 2.0))
    rejected = 0
    for seed in range(100):
        xy = sim_ipp(UNIT, field, 100, np.random.default_rng(seed))
        counts, _, _ = np.histogram2d(xy[:, 0], xy[:, 1], bins=5, range=[[0, 1], [0, 1]])
        rejected += stats.chisquare(counts.ravel()).pvalue < 0.01
    assert rejected <= 5


def test_step_field_splits_four_to_one():
    field = CovariateField.on_window(UNIT, np.array([[4.0, 1.0]]))
    left = []
    for seed in range(50):
        xy = sim_ipp(UNIT, field, 200, np.random.default_rng(seed))
        left.append(np.sum(xy[:, 0] < 0.5))
    res = stats.binomtest(int(np.sum(left)), 200 * 50, 0.8)
    assert res.pvalue > 0.01


def test_zero_field_rejected():
    with pytest.raises(ValueError):
        sim_ipp(UNIT, CovariateField.on_window(UNIT, np.zeros((2, 2))), 5, np.random.default_rng(0))


def test_thomas_degenerate_clusters():
    rng = np.random.default_rng(1)
    xy = sim_thomas(Window(0, 10, 0, 10), ThomasSpec(mu=50, sigma=1e-9, n_parents=3), rng)
    assert len(np.unique(np.round(xy, 6), axis=0)) <= 3


def test_thomas_mean_count_matches_edge_corrected_expectation():
    w = Window(0, 1, 0, 1)
    kappa, mu, sigma = 20.0, 5.0, 0.05
    rng = np.random.default_rng(2)
    n = [len(sim_thomas(w, ThomasSpec(mu=mu, sigma=sigma, kappa=kappa), rng)) for _ in range(500)]
    # each offspring lands in W with probability the parent density convolved with the kernel;
    # for a stationary parent process that integrates to |W| exactly (truncation at 4 sigma aside)
    expected = kappa * mu * w.area() * (1 - 2 * stats.norm.sf(4)) ** 2
    se = np.std(n, ddof=1) / np.sqrt(len(n))
    assert abs(np.mean(n) - expected) < 3.5 * se


def test_thomas_is_clustered():
    w = Window(0, 1, 0, 1)
    rng = np.random.default_rng(3)
    r = 0.05
    ks = []
    for _ in range(20):
        xy = sim_thomas(w, ThomasSpec(mu=8, sigma=0.02, kappa=15), rng)
        ks.append(translation_k_direct(xy, xy, r, w, True))
    assert np.mean(ks) > 1.5 * math.pi * r * r


def test_inhomogeneous_thomas_parents_follow_field():
    field = CovariateField.on_window(UNIT, np.array([[1.0, 0.0]]))
    xy = sim_thomas(UNIT, ThomasSpec(mu=5, sigma=0.01, kappa=50, parent_field=field), np.random.default_rng(4))
    assert np.mean(xy[:, 0] < 0.55) > 0.97


# -- Metropolis-Hastings --------------------------------------------------

def test_initial_counts_match_model():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pat, spec, layout, theta, covs, _ = random_config(rng)
        s = GibbsSampler(spec, theta, pat.counts, UNIT, rng, covs, init=pat)
        ref = neighbour_counts(pat, spec)[0]
        assert np.array_equal(s.N[:, :, :ref.shape[2]], ref)


@pytest.mark.parametrize("family", ["strauss", "saturation"])
def test_delta_matches_brute_force_density(family):
    rng = np.random.default_rng(6 if family == "strauss" else 7)
    checked = 0
    for _ in range(40):
        pat, spec, layout, theta, covs, _ = random_config(rng, family=family)
        if len(pat) == 0:
            continue
        s = GibbsSampler(spec, theta, pat.counts, UNIT, rng, covs, init=pat)
        for _ in range(5):
            a = int(rng.integers(len(pat)))
            new = rng.uniform(0, 1, 2)
            before = as_points(s.pattern())
            after = list(before)
            after[a] = (float(new[0]), float(new[1]), before[a][2])
            ref = log_density(after, spec, layout, theta, covs) - log_density(before, spec, layout, theta, covs)
            got = s.delta(a, new)
            assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)
            s.move(a, new)
            assert np.array_equal(s.N[:, :, :spec.max_steps], neighbour_counts(s.pattern(), spec)[0])
            checked += 1
    assert checked > 50


def test_counts_preserved_and_reproducible():
    spec = ModelSpec.build(2, (0.05, 0.1), saturation=2)
    layout = ThetaLayout(spec)
    theta = layout.theta(beta={(0, 0): [-1.0, 0.5], (0, 1): [0.3, 0.0], (1, 1): [0.2, 0.1]})
    a = sim_gibbs_fixed_n(spec, theta, [30, 20], UNIT, substream(1, "mh"), sweeps=20)
    b = sim_gibbs_fixed_n(spec, theta, [30, 20], UNIT, substream(1, "mh"), sweeps=20)
    assert a == b
    assert a.counts.tolist() == [30, 20]


def test_zero_theta_gives_binomial_process():
    spec = ModelSpec.build(1, (0.05,))
    theta = np.zeros(ThetaLayout(spec).size)
    r = [0.05, 0.1]
    ks = []
    for seed in range(30):
        pat = sim_gibbs_fixed_n(spec, theta, [100], UNIT, substream(seed, "csr"), sweeps=5)
        ks.append([translation_k_direct(pat.xy, pat.xy, q, UNIT, True) for q in r])
    ks = np.array(ks)
    se = ks.std(axis=0, ddof=1) / np.sqrt(len(ks))
    assert np.all(np.abs(ks.mean(axis=0) - np.pi * np.square(r)) < 3.5 * se)


def test_strong_strauss_repulsion_is_hard_core():
    spec = ModelSpec.build(1, (0.05,), family="strauss")
    theta = np.array([0.0, -10.0])
    ok = 0
    for seed in range(100):
        pat = sim_gibbs_fixed_n(spec, theta, [60], UNIT, substream(seed, "hc"), sweeps=200)
        d = pairwise_distance(pat.xy[:, None, :], pat.xy[None, :, :])
        ok += np.min(d + np.eye(60) * 9) > 0.05
    assert ok >= 99


def test_trend_moves_points():
    spec = ModelSpec.build(1, (0.02,), n_covariates=1)
    cov = CovariateField.on_window(UNIT, np.array([[0.0, 2.0]]))
    layout = ThetaLayout(spec)
    theta = layout.theta(alpha={0: [0.0, 1.0]})
    pat = sim_gibbs_fixed_n(spec, theta, [400], UNIT, substream(2, "trend"), sweeps=30, covariates=[cov])
    frac = np.mean(pat.xy[:, 0] >= 0.5)
    assert frac == pytest.approx(math.exp(2) / (1 + math.exp(2)), abs=0.06)
