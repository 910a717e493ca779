"""Simulation studies: replicated datasets with known interaction structure."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .analysis import FitSettings, analyse, detection_rates
from .mctest import STUDENTISED, interaction_test_matrix, range_grid
from .model import CovariateField, ModelSpec, ThetaLayout
from .pattern import MultiTypePattern, Window
from .pca import pca_covariates
from .simulate import ThomasSpec, sim_gibbs_fixed_n, sim_ipp, sim_poisson, sim_thomas, substream

log = logging.getLogger(__name__)

EXPERIMENTS = (1, 2, 4, 5)


@dataclass
class Dataset:
    pattern: MultiTypePattern
    truth: np.ndarray  # p x p boolean, symmetric
    spec: ModelSpec  # model used for fitting
    covariates: list = field(default_factory=list)
    settings: FitSettings = field(default_factory=FitSettings)
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# synthetic landscapes


def smooth_rasters(window: Window, n_maps: int, cell: float, scale: float, rng, n_latent: int | None = None,
                   noise: float = 0.1) -> list:
    """Smooth random rasters, optionally as mixtures of fewer latent maps plus noise."""
    nx = max(1, int(round(window.width / cell)))
    ny = max(1, int(round(window.height / cell)))

    def latent():
        z = gaussian_filter(rng.standard_normal((ny, nx)), scale / cell, mode="wrap")
        return (z - z.mean()) / z.std()

    if n_latent is None:
        maps = [latent() for _ in range(n_maps)]
    else:
        base = np.array([latent() for _ in range(n_latent)])
        mix = rng.standard_normal((n_maps, n_latent))
        maps = [np.tensordot(m, base, axes=1) + noise * rng.standard_normal((ny, nx)) for m in mix]
    return [CovariateField(window.x_min, window.y_min, window.width / nx, window.height / ny, m, f"z{k + 1}")
            for k, m in enumerate(maps)]


def _standardised(f: CovariateField) -> CovariateField:
    v = f.values
    return f.with_values((v - v.mean()) / v.std())


# ---------------------------------------------------------------------------
# Experiment 1: four types, mixed intra and inter structure


def exp1_truth() -> np.ndarray:
    t = np.zeros((4, 4), bool)
    t[[0, 1, 2], [0, 1, 2]] = True
    t[0, 1] = t[1, 0] = t[2, 3] = t[3, 2] = True
    return t


def exp1_model():
    spec = ModelSpec.build(4, (0.1, 0.2, 0.3), saturation=1, inter_ranges=(0.1, 0.4))
    layout = ThetaLayout(spec)
    theta = layout.theta(beta={(0, 0): [-1.0, 1.0, 0.0], (1, 1): [-1.0, 1.0, 0.0], (2, 2): [0.0, 1.0, 0.0],
                               (0, 1): [0.6, 0.3], (2, 3): [0.6, 0.3]})
    return spec, theta


def experiment_1(rng, sweeps: int = 500, counts=(100, 100, 50, 150)) -> Dataset:
    w = Window(0, 10, 0, 10)
    spec, theta = exp1_model()
    pat = sim_gibbs_fixed_n(spec, theta, counts, w, rng, sweeps=sweeps)
    return Dataset(pat, exp1_truth(), spec, settings=FitSettings(kx=4, ky=4))


# ---------------------------------------------------------------------------
# Experiment 2: two blocks of five, dense within-block interaction


def experiment_2(rng, sweeps: int = 500, p: int = 10) -> Dataset:
    w = Window(0, 10, 0, 10)
    half = p // 2
    sim_spec = ModelSpec.build(p, (0.25, 0.5), saturation=1)
    layout = ThetaLayout(sim_spec)
    beta = {}
    truth = np.zeros((p, p), bool)
    for i in range(p):
        beta[(i, i)] = [1.0, 0.5] if i < half else [-1.0, 0.5]
        for j in range(i + 1, p):
            if (i < half) == (j < half):
                beta[(i, j)] = [0.5, 0.25]
        truth[i, i] = True
    for (i, j) in beta:
        truth[i, j] = truth[j, i] = True
    counts = rng.choice([50, 100, 200], size=p)
    pat = sim_gibbs_fixed_n(sim_spec, layout.theta(beta=beta), counts, w, rng, sweeps=sweeps)
    fit_spec = ModelSpec.build(p, (0.15, 0.3), saturation=1)
    return Dataset(pat, truth, fit_spec, settings=FitSettings(kx=5, ky=5), info={"counts": counts.tolist()})


# ---------------------------------------------------------------------------
# Experiment 4: Poisson types, optionally with trends and one clustered extra type

FOREST = Window(0, 1000, 0, 500)


def forest_covariates(seed: int, k: int = 6, n_rasters: int = 15, cell: float = 20.0):
    """PCA maps of a fixed synthetic landscape standing in for measured soil rasters."""
    rasters = smooth_rasters(FOREST, n_rasters, cell, 60.0, substream(seed, "landscape"), n_latent=k,
                             noise=0.5)
    return pca_covariates(rasters, k)


def log_linear_counts(lo: float, hi: float, n: int) -> np.ndarray:
    return np.round(np.geomspace(lo, hi, n)).astype(np.int64)


def experiment_4(rng, p: int = 10, inhomogeneous: bool = False, extra: bool = False,
                 landscape_seed: int = 0, sweeps: int = 300) -> Dataset:
    pcs = forest_covariates(landscape_seed)
    unit = [_standardised(f) for f in pcs.fields]
    n_poisson = p - 1 if extra else p
    counts = log_linear_counts(50, 300, n_poisson)
    parts = []
    if inhomogeneous:
        trends = []
        for _ in range(2):
            coef = rng.choice([-1.0, 0.0, 1.0], p=[0.25, 0.5, 0.25], size=len(unit))
            trends.append(unit[0].with_values(np.exp(sum(c * f.values for c, f in zip(coef, unit)))))
        for i, n in enumerate(counts):
            parts.append(sim_ipp(FOREST, trends[i % 2], int(n), rng))
    else:
        parts = [sim_poisson(FOREST, rng, n=int(n)) for n in counts]
    truth = np.zeros((p, p), bool)
    if extra:
        gspec = ModelSpec.build(1, (1.0, 20.0), saturation=3)
        g = sim_gibbs_fixed_n(gspec, np.array([0.0, -10.0, 1.0]), [100], FOREST, rng, sweeps=sweeps)
        parts.append(g.xy)
        truth[p - 1, p - 1] = True
    pat = MultiTypePattern.from_subpatterns(parts, FOREST)
    spec = ModelSpec.build(p, (7.0, 15.0), n_covariates=len(pcs.fields)).with_auto_saturation(
        pat.counts, FOREST.area())
    return Dataset(pat, truth, spec, list(pcs.fields), FitSettings(kx=7, ky=4),
                   info={"variance_captured": float(pcs.explained[-1])})


# ---------------------------------------------------------------------------
# Experiment 5: independent clustered and repulsive species on one habitat field

THOMAS_1 = dict(mu=10.0, sigma=15.0)
THOMAS_2 = dict(mu=5.0, sigma=8.0)


def _range_scale(n: float) -> float:
    return float(np.sqrt(225.0 / n))


def exp5_species(landscape_seed: int, per_block: int):
    """Fixed habitat coefficient per species (t of 4 levels gives weight t/(t+1))."""
    rng = substream(landscape_seed, "exp5-species")
    t = rng.integers(0, 5, size=4 * per_block)
    return np.where(t > 0, t / (t + 1.0), 0.0)


def experiment_5(rng, per_block: int = 4, landscape_seed: int = 0, sweeps: int = 300,
                 thomas=(THOMAS_1, THOMAS_2)) -> Dataset:
    z = _standardised(smooth_rasters(FOREST, 1, 10.0, 80.0, substream(landscape_seed, "exp5-field"))[0])
    z = z.with_values(z.values, "habitat")
    coef = exp5_species(landscape_seed, per_block)
    targets = log_linear_counts(50, 1000, per_block)
    parts = []
    models = []
    for b in range(4):
        for k, n in enumerate(targets):
            s = b * per_block + k
            if b < 2:
                par = thomas[b]
                field_ = z.with_values(np.exp(coef[s] * z.values))
                spec = ThomasSpec(mu=par["mu"], sigma=par["sigma"],
                                  n_parents=max(1, int(round(n / par["mu"]))), parent_field=field_)
                parts.append(sim_thomas(FOREST, spec, rng))
                models.append("thomas1" if b == 0 else "thomas2")
            else:
                sc = _range_scale(n)
                if b == 2:
                    gspec = ModelSpec.build(1, (4.0 * sc, 12.0 * sc), saturation=2, n_covariates=1)
                    beta = [-2.0, 0.8]
                else:
                    gspec = ModelSpec.build(1, (6.0 * sc,), saturation=2, n_covariates=1)
                    beta = [-2.0]
                theta = np.concatenate([[0.0, coef[s]], beta])
                g = sim_gibbs_fixed_n(gspec, theta, [int(n)], FOREST, rng, sweeps=sweeps, covariates=[z])
                parts.append(g.xy)
                models.append("geyer1" if b == 2 else "geyer2")
    pat = MultiTypePattern.from_subpatterns(parts, FOREST)
    p = pat.p
    spec = ModelSpec.build(p, (10.0, 20.0), n_covariates=1).with_auto_saturation(pat.counts, FOREST.area())
    return Dataset(pat, np.eye(p, dtype=bool), spec, [z], FitSettings(kx=7, ky=4),
                   info={"models": models, "habitat_coefficients": coef.tolist()})


# ---------------------------------------------------------------------------
# harness


def experiment_harness(exp_id: int, rng, **scale) -> Dataset:
    """One replicate of experiment ``exp_id``; ``scale`` overrides size parameters."""
    gens = {1: experiment_1, 2: experiment_2, 4: experiment_4, 5: experiment_5}
    if exp_id not in gens:
        raise ValueError(f"unknown experiment {exp_id}; choose from {EXPERIMENTS}")
    return gens[exp_id](rng, **scale)


@dataclass
class ReplicateResult:
    replicate: int
    rates: dict  # rule -> detection rates
    gammas: dict
    matrices: dict
    counts: list


def run_replicate(exp_id: int, replicate: int, seed: int = 0, settings: FitSettings | None = None,
                  mc: dict | None = None, **scale) -> ReplicateResult:
    """Simulate and analyse one replicate; ``mc`` adds Monte Carlo test matrices."""
    data = experiment_harness(exp_id, substream(seed, "experiment", exp_id, replicate), **scale)
    s = replace(data.settings, **(vars(settings) if settings else {}))
    if settings is not None:
        s.kx, s.ky = data.settings.kx, data.settings.ky
    res = analyse(data.pattern, data.spec, data.covariates, s, seed=seed * 1000 + replicate)
    rates = {rule: detection_rates(m, data.truth) for rule, m in res.matrices.items()}
    gammas = dict(res.gammas)
    matrices = dict(res.matrices)
    if mc:
        mc = dict(mc)
        r = mc.pop("r", None)
        if r is None:
            r = range_grid(data.pattern.window)
        out = interaction_test_matrix(data.pattern, r, seed=seed * 1000 + replicate, **mc)
        key = "mc_" + mc.get("test", STUDENTISED)
        matrices[key] = out.indicators
        rates[key] = detection_rates(out.indicators, data.truth, symmetric=False)
    return ReplicateResult(replicate, rates, gammas, matrices, data.pattern.counts.tolist())


def summarise(results) -> dict:
    """Mean and sd of every rate per rule across replicates."""
    out = {}
    for rule in results[0].rates:
        keys = results[0].rates[rule]
        table = np.array([[r.rates[rule][k] for k in keys] for r in results])
        mean = np.full(len(keys), np.nan)
        sd = np.full(len(keys), np.nan)
        for c in range(len(keys)):
            col = table[:, c][np.isfinite(table[:, c])]
            if col.size:
                mean[c] = col.mean()
                sd[c] = col.std(ddof=1) if col.size > 1 else 0.0
        out[rule] = {k: (float(m), float(d)) for k, m, d in zip(keys, mean, sd)}
    return out
