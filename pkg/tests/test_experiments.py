import numpy as np
import pytest

from multigibbs.experiments import (
    EXPERIMENTS,
    FOREST,
    exp1_truth,
    exp5_species,
    experiment_harness,
    forest_covariates,
    run_replicate,
)
from multigibbs.simulate import substream


def test_exp1_truth_structure():
    t = exp1_truth()
    assert np.array_equal(t, t.T) and t.sum() == 7


def test_exp2_blocks():
    d = experiment_harness(2, np.random.default_rng(0), sweeps=5)
    assert d.pattern.p == 10 and d.truth[:5, :5].all() and not d.truth[:5, 5:].any()


@pytest.mark.parametrize("extra", [False, True])
def test_exp4_shapes(extra):
    d = experiment_harness(4, np.random.default_rng(1), inhomogeneous=True, extra=extra, sweeps=5)
    assert d.pattern.p == 10 and d.pattern.window == FOREST
    assert d.truth.sum() == int(extra) and d.truth[9, 9] == extra
    assert len(d.covariates) == 6 and d.info["variance_captured"] >= 0.7


def test_forest_landscape_fixed_by_seed():
    a, b = forest_covariates(3), forest_covariates(3)
    np.testing.assert_array_equal(a.fields[0].values, b.fields[0].values)


def test_exp5_species_and_shapes():
    coef = exp5_species(0, 2)
    assert len(coef) == 8 and set(np.round(coef * 20)) <= {0, 10, 13, 15, 16}
    d = experiment_harness(5, np.random.default_rng(2), per_block=1, sweeps=5)
    assert d.pattern.p == 4 and np.array_equal(d.truth, np.eye(4, dtype=bool))
    assert d.info["models"] == ["thomas1", "thomas2", "geyer1", "geyer2"]


def test_unknown_experiment():
    with pytest.raises(ValueError):
        experiment_harness(3, np.random.default_rng(0))
    assert 3 not in EXPERIMENTS


def test_replicates_reproducible():
    a = run_replicate(1, 0, seed=4, sweeps=10, counts=(20, 20, 15, 25))
    b = run_replicate(1, 0, seed=4, sweeps=10, counts=(20, 20, 15, 25))
    assert a.gammas == b.gammas and a.counts == b.counts
    assert set(a.rates) == {"cv_raw", "cv_inverse", "cv_pearson", "aic05"}


def test_substreams_distinct_per_replicate():
    x = substream(0, "experiment", 1, 0).random(3)
    y = substream(0, "experiment", 1, 1).random(3)
    assert not np.allclose(x, y)
