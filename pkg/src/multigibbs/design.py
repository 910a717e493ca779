"""Logistic-regression form of the pseudo-likelihood.

Data points and stratified dummy points become the rows of a logistic
regression with response ``t(u) = 1[u is a data point]``, statistic row
``b(u)`` and offset ``-log rho_type(u)``.  Dummies never act as neighbours:
every row is computed against the data pattern alone.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.special import expit

from .model import ModelSpec, ThetaLayout, covariate_matrix, interaction_statistics, neighbour_counts
from .pattern import MultiTypePattern, Window, erode_window

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DummySpec:
    intensity_factor: float = 4.0
    min_per_type: int = 500

    def __post_init__(self):
        if self.intensity_factor <= 0:
            raise ValueError("dummy intensity factor must be positive")
        if self.min_per_type < 1:
            raise ValueError("minimum dummy count must be at least 1")

    def count(self, n: int) -> int:
        return max(int(math.ceil(self.intensity_factor * n)), self.min_per_type)


def stratified_uniform(window: Window, m: int, rng) -> np.ndarray:
    """``m`` points, at most one per cell of an aspect-balanced grid."""
    if m == 0:
        return np.empty((0, 2))
    aspect = window.width / window.height
    nx = max(1, math.ceil(math.sqrt(m * aspect)))
    ny = max(1, math.ceil(math.sqrt(m / aspect)))
    while nx * ny < m:
        ny += 1
    cells = np.sort(rng.choice(nx * ny, size=m, replace=False))
    ix, iy = cells % nx, cells // nx
    u = rng.random((m, 2))
    x = window.x_min + (ix + u[:, 0]) * (window.width / nx)
    y = window.y_min + (iy + u[:, 1]) * (window.height / ny)
    return np.column_stack([np.minimum(x, window.x_max), np.minimum(y, window.y_max)])


def generate_dummies(window: Window, counts, spec: DummySpec | None = None, rng=None):
    """Stratified uniform dummies per type and their intensities ``rho_i``."""
    spec = spec or DummySpec()
    rng = np.random.default_rng(rng)
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    parts = [stratified_uniform(window, spec.count(int(n)), rng) for n in counts]
    rho = np.array([len(a) / window.area() for a in parts])
    return MultiTypePattern.from_subpatterns(parts, window), rho


@dataclass(frozen=True, eq=False)
class DesignData:
    """Rows of the logistic pseudo-likelihood; data rows precede dummy rows."""

    B: sparse.csr_matrix
    t: np.ndarray
    offset: np.ndarray
    types: np.ndarray
    xy: np.ndarray
    is_data: np.ndarray
    source: np.ndarray
    layout: ThetaLayout
    spec: ModelSpec
    rho: np.ndarray
    window: Window
    r_bor: float
    warnings: tuple = ()
    fold: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.B.shape[0]

    @property
    def eroded(self) -> Window:
        return erode_window(self.window, self.r_bor)

    def rows(self, mask) -> "DesignData":
        mask = np.asarray(mask)
        return replace(
            self,
            B=self.B[mask],
            t=self.t[mask],
            offset=self.offset[mask],
            types=self.types[mask],
            xy=self.xy[mask],
            is_data=self.is_data[mask],
            source=self.source[mask],
            fold=None if self.fold is None else self.fold[mask],
        )

    def with_offset_shift(self, c: float) -> "DesignData":
        return replace(self, offset=self.offset + c)

    def with_folds(self, fold) -> "DesignData":
        return replace(self, fold=np.asarray(fold, dtype=np.int64))

    def to_csv(self, path) -> None:
        names = self.layout.column_names()
        dense = self.B.tocsr()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "type", "x", "y", "offset"] + names)
            for r in range(self.n_rows):
                row = np.zeros(self.layout.size)
                lo, hi = dense.indptr[r], dense.indptr[r + 1]
                row[dense.indices[lo:hi]] = dense.data[lo:hi]
                w.writerow([int(self.t[r]), int(self.types[r]) + 1, repr(float(self.xy[r, 0])),
                            repr(float(self.xy[r, 1])), repr(float(self.offset[r]))]
                           + [repr(float(v)) for v in row])


def _alpha_block(layout: ThetaLayout, types, xy, covariates) -> sparse.csr_matrix:
    n = len(types)
    z = np.column_stack([np.ones(n), covariate_matrix(covariates, xy)]) if n else np.empty((0, 1))
    k = z.shape[1]
    cols = layout.alpha_start[types][:, None] + np.arange(k)[None, :]
    rows = np.repeat(np.arange(n), k)
    return sparse.csr_matrix((z.ravel(), (rows, cols.ravel())), shape=(n, layout.size))


def build_design(data: MultiTypePattern, dummies: MultiTypePattern, rho, spec: ModelSpec,
                 covariates=(), r_bor: float | None = None) -> DesignData:
    """Assemble the regression rows for all points inside the eroded window.

    Rows outside ``W (-) b(0, r_bor)`` are dropped; their points still act as
    neighbours of the retained rows.
    """
    covariates = list(covariates)
    if len(covariates) != spec.n_covariates:
        raise ValueError(f"spec expects {spec.n_covariates} covariates, got {len(covariates)}")
    for c in covariates:
        if not c.covers(data.window):
            raise ValueError(f"covariate {c.name!r} does not cover the window")
    if r_bor is None:
        r_bor = spec.max_range
    if r_bor < spec.max_range * (1 - 1e-12):
        raise ValueError(f"border range {r_bor} is below the maximal interaction range {spec.max_range}")
    if dummies.window != data.window or dummies.p != data.p or data.p != spec.p:
        raise ValueError("data, dummies and spec must share window and type count")
    rho = np.asarray(rho, dtype=float)
    eroded = erode_window(data.window, r_bor)
    layout = ThetaLayout(spec)
    cache = neighbour_counts(data, spec)

    keep_d = np.flatnonzero(eroded.contains(data.xy)) if len(data) else np.empty(0, dtype=np.int64)
    keep_q = np.flatnonzero(eroded.contains(dummies.xy)) if len(dummies) else np.empty(0, dtype=np.int64)
    d_xy, d_t = data.xy[keep_d], data.types[keep_d]
    q_xy, q_t = dummies.xy[keep_q], dummies.types[keep_q]

    inter_d = interaction_statistics(d_xy, d_t, data, spec, layout, data_index=keep_d, cache=cache)
    inter_q = interaction_statistics(q_xy, q_t, data, spec, layout, cache=cache)
    B = sparse.vstack([
        _alpha_block(layout, d_t, d_xy, covariates) + inter_d,
        _alpha_block(layout, q_t, q_xy, covariates) + inter_q,
    ]).tocsr()
    B.sort_indices()

    types = np.concatenate([d_t, q_t])
    warnings = []
    retained = np.bincount(d_t, minlength=spec.p)
    for i in np.flatnonzero(retained == 0):
        msg = f"type {i + 1} has no data points inside the eroded window"
        log.warning(msg)
        warnings.append(msg)
    return DesignData(
        B=B,
        t=np.concatenate([np.ones(len(keep_d)), np.zeros(len(keep_q))]),
        offset=-np.log(rho[types]),
        types=types,
        xy=np.vstack([d_xy, q_xy]),
        is_data=np.concatenate([np.ones(len(keep_d), bool), np.zeros(len(keep_q), bool)]),
        source=np.concatenate([keep_d, keep_q]),
        layout=layout,
        spec=spec,
        rho=rho,
        window=data.window,
        r_bor=float(r_bor),
        warnings=tuple(warnings),
    )


# ---------------------------------------------------------------------------
# Objective


def softplus(eta):
    """``log(1 + exp(eta))`` with the linear branch above 35."""
    eta = np.asarray(eta, dtype=float)
    return np.where(eta > 35.0, eta, np.log1p(np.exp(np.minimum(eta, 35.0))))


def linear_predictor(design: DesignData, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (design.layout.size,):
        raise ValueError(f"theta must have length {design.layout.size}")
    eta = design.B @ theta + design.offset
    return np.clip(eta, -1e300, 1e300)


def loglik_from_eta(t, eta) -> float:
    return float(np.sum(t * eta - softplus(eta)))


def logistic_loglik(design: DesignData, theta) -> float:
    """``t'(B theta + o) - 1' log(1 + exp(B theta + o))``."""
    return loglik_from_eta(design.t, linear_predictor(design, theta))


def gradient(design: DesignData, theta) -> np.ndarray:
    """``B'(t - sigmoid(B theta + o))``."""
    eta = linear_predictor(design, theta)
    return np.asarray(design.B.T @ (design.t - expit(eta))).ravel()
