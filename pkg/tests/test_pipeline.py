import numpy as np
import pytest

from multigibbs.experiments import exp1_model
from multigibbs.model import CovariateField, write_raster
from multigibbs.pattern import Window, read_pattern_csv, write_pattern_csv
from multigibbs.pipeline import PipelineConfig, StageError, read_sim_params, run_pipeline, simulate_from_params
from multigibbs.report import read_matrix_csv
from multigibbs.simulate import sim_gibbs_fixed_n

W = Window(0, 10, 0, 10)


@pytest.fixture(scope="module")
def pattern_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    spec, theta = exp1_model()
    pat = sim_gibbs_fixed_n(spec, theta, [30, 45, 20, 35], W, np.random.default_rng(11), sweeps=50)
    write_pattern_csv(pat, d / "pattern.csv")
    g = np.linspace(0, 1, 10)
    write_raster(CovariateField.on_window(W, np.add.outer(g, g ** 2), "slope"), d / "slope.txt")
    write_raster(CovariateField.on_window(W, np.add.outer(np.sin(3 * g), g), "wave"), d / "wave.txt")
    return d


def _config(d, out, **over):
    sections = {
        "paths": {"pattern": str(d / "pattern.csv"), "output": str(out), "window": "0 10 0 10"},
        "model": {"ranges": "0.1 0.3"},
        "lasso": {"n_gamma": "12"},
        "cv": {"kx": "3", "ky": "3"},
        "run": {"seed": "7"},
    }
    for key, val in over.items():
        sec, k = key.split("__")
        sections.setdefault(sec, {})[k] = val
    return PipelineConfig.from_dict(sections)


def test_unknown_key_and_section_rejected(pattern_file, tmp_path):
    with pytest.raises(ValueError, match="unknown key"):
        _config(pattern_file, tmp_path, model__range="1 2")
    with pytest.raises(ValueError, match="unknown section"):
        PipelineConfig.from_dict({"paths": {}, "extra": {}})


@pytest.mark.parametrize("key,val", [("model__ranges", "2 1"), ("model__saturation", "0"),
                                     ("cv__kinds", "raw bogus"), ("mc__s", "5"), ("paths__pattern", "/no/file")])
def test_invalid_values_rejected(pattern_file, tmp_path, key, val):
    with pytest.raises(ValueError):
        _config(pattern_file, tmp_path, **{key: val})


def test_echo_rereads_to_same_config(pattern_file, tmp_path):
    cfg = _config(pattern_file, tmp_path / "o", model__pca_components="2",
                  paths__covariates=f"{pattern_file / 'slope.txt'} {pattern_file / 'wave.txt'}")
    (tmp_path / "echo.ini").write_text(cfg.to_ini())
    again = PipelineConfig.read(tmp_path / "echo.ini")
    assert again.values == cfg.values


def test_end_to_end_outputs(pattern_file, tmp_path):
    cfg = _config(pattern_file, tmp_path / "o", model__pca_components="1",
                  paths__covariates=f"{pattern_file / 'slope.txt'} {pattern_file / 'wave.txt'}")
    rep = run_pipeline(cfg)
    assert set(rep.matrices) == {"cv_raw", "cv_inverse", "cv_pearson", "aic05"}
    pat = read_pattern_csv(pattern_file / "pattern.csv", W)
    assert rep.order.tolist() == np.argsort(pat.counts, kind="stable").tolist()
    grid = np.loadtxt(tmp_path / "o" / "path.csv", delimiter=",", skiprows=1, usecols=0)
    for rule, g in rep.gammas.items():
        assert np.any(grid == g)
        m = read_matrix_csv(tmp_path / "o" / f"matrix_{rule}.csv")
        assert m.shape == (4, 4)
        np.testing.assert_array_equal(m, rep.matrices[rule])
    assert rep.coefficients["aic05"].shape == (4, 2)
    assert (tmp_path / "o" / "pca.csv").exists()
    assert set(rep.timings) >= {"load", "pca", "fit"}


def test_rerun_byte_identical_across_workers(pattern_file, tmp_path):
    a = run_pipeline(_config(pattern_file, tmp_path / "a"))
    b = run_pipeline(_config(pattern_file, tmp_path / "b", cv__workers="2"))
    assert a.files == [f for f in b.files]
    for name in a.files:
        if name == "config.ini":
            continue  # echoes the output directory and worker count
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_stage_tag_on_failure(pattern_file, tmp_path):
    cfg = _config(pattern_file, tmp_path / "o", cv__kx="40", cv__ky="40", model__r_bor="0.2")
    with pytest.raises(StageError) as err:
        run_pipeline(cfg)
    assert err.value.stage == "fit"
    assert (tmp_path / "o" / "config.ini").exists()  # partial outputs kept


def test_sim_params_gibbs(tmp_path):
    (tmp_path / "s.ini").write_text(
        "[model]\nfamily = strauss\nwindow = 0 5 0 5\ncounts = 20 10\nranges = 0.3\nsweeps = 20\n"
        "[theta]\nbeta.1.2 = -1\nbeta.2.2 = 0\n")
    params = read_sim_params(tmp_path / "s.ini")
    assert params.truth.tolist() == [[False, True], [True, False]]
    pat = simulate_from_params(params, np.random.default_rng(0))
    assert pat.counts.tolist() == [20, 10]


def test_sim_params_rejects_typos(tmp_path):
    (tmp_path / "s.ini").write_text("[model]\nwindow = 0 1 0 1\ncounts = 3\nrange = 0.1\n")
    with pytest.raises(ValueError, match="unknown key"):
        read_sim_params(tmp_path / "s.ini")


def test_fresh_dummies_per_fold(pattern_file, tmp_path):
    rep = run_pipeline(_config(pattern_file, tmp_path / "o", cv__regenerate_dummies="true"))
    assert rep.diagnostics["cv_dummies"] == "per_fold"
    shared = run_pipeline(_config(pattern_file, tmp_path / "s"))
    assert shared.diagnostics["cv_dummies"] == "shared"
    raw = lambda d: (tmp_path / d / "cv_raw.csv").read_bytes()
    assert raw("o") != raw("s")  # the raw compensator sees the new quadrature
    # inverse residuals use an exact compensator, so only the fits move
    assert set(rep.gammas) == set(shared.gammas)
