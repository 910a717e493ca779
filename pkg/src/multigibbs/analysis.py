"""Fit, cross-validate and extract interaction matrices for one pattern."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cv import INVERSE, KINDS, PEARSON, RAW, cv_select_all, partition_window
from .design import DummySpec, build_design, generate_dummies
from .lasso import INVERSE_SQRT_WEIGHTS, GroupProblem, aic05_rule, fit_path, selected_groups
from .simulate import substream

RULES = ("cv_raw", "cv_inverse", "cv_pearson", "aic05")
_RULE_KIND = {"cv_raw": RAW, "cv_inverse": INVERSE, "cv_pearson": PEARSON}


@dataclass
class FitSettings:
    dummy_factor: float = 4.0
    dummy_floor: int = 500
    r_bor: float | None = None  # defaults to the largest model range
    n_gamma: int = 100
    ratio: float = 1e-3
    tol: float = 1e-7
    kkt_tol: float = 1e-5
    max_iter: int = 500
    weight_power: float = INVERSE_SQRT_WEIGHTS
    kx: int = 4
    ky: int = 4
    kinds: tuple = KINDS
    cv: bool = True
    workers: int = 1
    type_weights: object = None  # per-type residual weights, or "intensity" for n_i / |W|
    regenerate_dummies: bool = False  # fresh dummy points for every CV fold


@dataclass
class Analysis:
    design: object
    path: object
    partition: object
    cv: dict
    gammas: dict
    matrices: dict
    fits: dict = field(default_factory=dict)

    @property
    def rules(self) -> list:
        return list(self.gammas)


def analyse(pattern, spec, covariates=(), settings: FitSettings | None = None, seed: int = 0) -> Analysis:
    """Dummies, design, penalty path, AIC0.5 and cross-validated selections."""
    s = settings or FitSettings()
    dummies, rho = generate_dummies(pattern.window, pattern.counts, DummySpec(s.dummy_factor, s.dummy_floor),
                                    substream(seed, "dummies"))
    r_bor = spec.max_range if s.r_bor is None else s.r_bor
    design = build_design(pattern, dummies, rho, spec, covariates, r_bor)
    problem = GroupProblem(design, s.weight_power)
    path = fit_path(problem, tol=s.tol, kkt_tol=s.kkt_tol, max_iter=s.max_iter, n_gamma=s.n_gamma,
                    ratio=s.ratio)
    gammas = {}
    cv = {}
    partition = None
    if s.cv and len(path.gammas) > 1:
        partition = partition_window(pattern.window, s.kx, s.ky, r_bor)
        weights = s.type_weights
        if isinstance(weights, str):
            if weights != "intensity":
                raise ValueError(f"unknown type weighting {weights!r}")
            weights = pattern.counts / pattern.window.area()
        folds = None
        if s.regenerate_dummies:
            folds = []
            for k in range(len(partition)):
                d, r = generate_dummies(pattern.window, pattern.counts, DummySpec(s.dummy_factor, s.dummy_floor),
                                        substream(seed, "dummies", k + 1))
                folds.append(build_design(pattern, d, r, spec, covariates, r_bor))
        cv = cv_select_all(design, partition, s.kinds, grid=path.gammas, weight_power=s.weight_power,
                           tol=s.tol, max_iter=s.max_iter, type_weights=weights, workers=s.workers,
                           fold_designs=folds)
        for rule, kind in _RULE_KIND.items():
            if kind in cv:
                gammas[rule] = cv[kind].gamma
    gammas["aic05"] = aic05_rule(path)
    fits = {rule: path.fits[path.index_of(g)] for rule, g in gammas.items()}
    matrices = {rule: selected_groups(f, design.layout) for rule, f in fits.items()}
    return Analysis(design, path, partition, cv, gammas, matrices, fits)


def detection_rates(est, truth, symmetric: bool = True) -> dict:
    """True and false positive rates, overall and split into intra/inter pairs.

    Symmetric estimates are scored on the upper triangle; otherwise every
    ordered pair counts.  Rates without a denominator are ``nan``.
    """
    est = np.asarray(est) != 0
    truth = np.asarray(truth) != 0
    p = truth.shape[0]
    cells = np.triu(np.ones((p, p), bool)) if symmetric else np.ones((p, p), bool)
    diag = np.eye(p, dtype=bool)
    out = {}
    for name, region in (("", cells), ("_intra", cells & diag), ("_inter", cells & ~diag)):
        pos, neg = region & truth, region & ~truth
        out["tp" + name] = est[pos].mean() if pos.any() else np.nan
        out["fp" + name] = est[neg].mean() if neg.any() else np.nan
    return {k: float(v) for k, v in out.items()}
