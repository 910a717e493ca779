import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multigibbs.experiments import FOREST, smooth_rasters
from multigibbs.model import CovariateField
from multigibbs.pattern import Window
from multigibbs.pca import pca_covariates

W = Window(0, 10, 0, 5)


def _standardised_matrix(rasters):
    Z = np.column_stack([r.values.ravel() for r in rasters])
    return (Z - Z.mean(0)) / Z.std(0)


def test_full_rank_reconstruction():
    rng = np.random.default_rng(1)
    rasters = [CovariateField.on_window(W, rng.normal(size=(6, 9)), f"c{i}") for i in range(4)]
    res = pca_covariates(rasters, 4)
    maps = np.column_stack([f.values.ravel() for f in res.fields])
    np.testing.assert_allclose(maps @ res.loadings, _standardised_matrix(rasters), atol=1e-8)
    assert res.explained[-1] == pytest.approx(1.0)


def test_correlated_pair_is_rank_one():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 7))
    res = pca_covariates([CovariateField.on_window(W, v), CovariateField.on_window(W, 3 * v + 1)], 1)
    assert res.explained[0] >= 0.999


def test_latent_structure_captured():
    rasters = smooth_rasters(FOREST, 15, 20.0, 60.0, np.random.default_rng(3), n_latent=6, noise=0.1)
    res = pca_covariates(rasters, 6)
    assert res.explained[-1] >= 0.70
    assert [f.name for f in res.fields] == [f"pc{i + 1}" for i in range(6)]


def test_constant_raster_dropped(caplog):
    rng = np.random.default_rng(4)
    rasters = [CovariateField.on_window(W, rng.normal(size=(4, 4)), "a"),
               CovariateField.on_window(W, np.ones((4, 4)), "flat"),
               CovariateField.on_window(W, rng.normal(size=(4, 4)), "b")]
    res = pca_covariates(rasters, 2)
    assert res.dropped == ["flat"] and res.kept == ["a", "b"]
    assert "constant" in caplog.text


def test_bad_inputs():
    a = CovariateField.on_window(W, np.arange(12.0).reshape(3, 4))
    b = CovariateField.on_window(W, np.arange(20.0).reshape(4, 5))
    with pytest.raises(ValueError):
        pca_covariates([a, b], 1)
    with pytest.raises(ValueError):
        pca_covariates([a], 2)
    with pytest.raises(ValueError):
        pca_covariates([], 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_components_uncorrelated_with_sorted_variance(seed, m):
    rng = np.random.default_rng(seed)
    rasters = [CovariateField.on_window(W, rng.normal(size=(5, 6))) for _ in range(m)]
    res = pca_covariates(rasters, m)
    maps = np.column_stack([f.values.ravel() for f in res.fields])
    gram = maps.T @ maps
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0, atol=1e-8)
    assert np.all(np.diff(np.diag(gram)) <= 1e-9)
    assert np.all(np.diff(res.explained) >= -1e-12)
    np.testing.assert_allclose(res.loadings @ res.loadings.T, np.eye(m), atol=1e-10)
