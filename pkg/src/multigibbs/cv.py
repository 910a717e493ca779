"""Spatially blocked cross-validation of the penalty with h-residuals."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import DesignData
from .lasso import INVERSE_SQRT_WEIGHTS, GroupProblem, default_grid, fit_path, gamma_max
from .pattern import DegenerateWindowError, Window, erode_window

log = logging.getLogger(__name__)

RAW, INVERSE, PEARSON = "raw", "inverse", "pearson"
KINDS = (RAW, INVERSE, PEARSON)


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    window: Window
    kx: int
    ky: int
    r_bor: float
    quadrats: tuple
    eroded: tuple

    def __len__(self) -> int:
        return len(self.quadrats)

    @property
    def loss_fraction(self) -> float:
        return 1.0 - sum(w.area() for w in self.eroded) / self.window.area()

    def assign(self, xy) -> np.ndarray:
        """Quadrat index per point; shared edges go to the lower-left cell except at the far edge."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        w = self.window
        ix = np.floor((xy[:, 0] - w.x_min) / w.width * self.kx).astype(np.int64)
        iy = np.floor((xy[:, 1] - w.y_min) / w.height * self.ky).astype(np.int64)
        return np.clip(iy, 0, self.ky - 1) * self.kx + np.clip(ix, 0, self.kx - 1)


def partition_window(w: Window, kx: int, ky: int, r_bor: float) -> Partition:
    """Equal ``kx x ky`` tiling of ``w`` with each tile eroded by ``r_bor``."""
    if kx < 1 or ky < 1:
        raise PartitionError("kx and ky must be at least 1")
    xs = np.linspace(w.x_min, w.x_max, kx + 1)
    ys = np.linspace(w.y_min, w.y_max, ky + 1)
    quads, eroded = [], []
    for j in range(ky):
        for i in range(kx):
            q = Window(xs[i], xs[i + 1], ys[j], ys[j + 1])
            try:
                e = erode_window(q, r_bor)
            except DegenerateWindowError:
                raise PartitionError(
                    f"quadrats of {q.width:g} x {q.height:g} vanish under erosion by {r_bor:g}; "
                    "use fewer splits") from None
            quads.append(q)
            eroded.append(e)
    return Partition(w, kx, ky, float(r_bor), tuple(quads), tuple(eroded))


def _h(kind: str, lam):
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        if kind == RAW:
            return np.ones_like(lam)
        if kind == INVERSE:
            return np.where(lam > 0, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
        if kind == PEARSON:
            return np.where(lam > 0, 1.0 / np.sqrt(np.where(lam > 0, lam, 1.0)), 0.0)
    raise ValueError(f"unknown residual kind {kind!r}")


def h_residual(design: DesignData, region: Window, thetas, kind: str, type_weights=None) -> np.ndarray:
    """h-residual over ``region`` for one or more parameter vectors.

    Data terms use the data rows of ``design`` (each point against the rest
    of the pattern); the compensator is exact for the inverse kind and a
    dummy-point quadrature ``sum h lambda / rho`` otherwise.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    p = design.spec.p
    wt = np.ones(p) if type_weights is None else np.asarray(type_weights, dtype=float)
    inside = region.contains(design.xy)
    rows = np.flatnonzero(inside)
    B = design.B[rows]
    with np.errstate(over="ignore"):
        lam = np.exp(np.minimum(B @ thetas.T, 709.0))
    h = _h(kind, lam)
    is_data = design.is_data[rows]
    rw = wt[design.types[rows]][:, None]
    data_term = np.sum(rw[is_data] * h[is_data], axis=0)
    if kind == INVERSE:
        integral = np.full(len(thetas), region.area() * wt.sum())
    else:
        dummy = ~is_data
        inv_rho = 1.0 / design.rho[design.types[rows][dummy]]
        integral = np.sum(rw[dummy] * h[dummy] * lam[dummy] * inv_rho[:, None], axis=0)
    return data_term - integral


@dataclass
class CVResult:
    kind: str
    gammas: np.ndarray
    residuals: np.ndarray  # folds x grid, NaN for dropped folds
    risk: np.ndarray
    gamma: float
    index: int
    partition: Partition
    dropped: list = field(default_factory=list)
    converged: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "gamma", "residual", "squared_residual"])
            for k in range(self.residuals.shape[0]):
                for g, r in zip(self.gammas, self.residuals[k]):
                    w.writerow([k + 1, repr(float(g)), repr(float(r)), repr(float(r * r))])

    def summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "risk", "selected"])
            for i, (g, r) in enumerate(zip(self.gammas, self.risk)):
                w.writerow([repr(float(g)), repr(float(r)), int(i == self.index)])


def _fold_job(args):
    design, k, grid, partition, weight_power, tol, max_iter = args
    train = design.rows(partition.assign(design.xy) != k)
    path = fit_path(GroupProblem(train, weight_power), grid=grid, gmax=float(grid[0]), tol=tol,
                    max_iter=max_iter, compute_df=False)
    return path.thetas, np.array([f.converged for f in path.fits])


def select_gamma(gammas, risk) -> int:
    """Index of the minimal risk; ties go to the largest penalty."""
    risk = np.asarray(risk, dtype=float)
    best = np.nanmin(risk)
    ties = np.flatnonzero(risk <= best + 1e-12 * max(abs(best), 1e-300))
    return int(ties[np.argmax(np.asarray(gammas)[ties])])


def cv_select_all(design: DesignData, partition: Partition, kinds=KINDS, grid=None,
                  weight_power: float = INVERSE_SQRT_WEIGHTS, tol: float = 1e-7, max_iter: int = 500,
                  type_weights=None, workers: int = 1, n_gamma: int = 100,
                  ratio: float = 1e-3, fold_designs=None) -> dict:
    """Fit the path without each quadrat once and score it with every residual kind.

    Rows located in a held-out quadrat leave the training objective, while
    its points remain neighbours of the retained rows.  ``fold_designs``
    gives each fold its own design (fresh dummies); by default every fold
    shares ``design``.
    """
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown residual kind {kind!r}")
    if len(partition) < 2:
        raise PartitionError("cross-validation needs at least two quadrats")
    if partition.r_bor < design.r_bor * (1 - 1e-12):
        raise PartitionError("quadrat erosion must be at least the border range of the design")
    if grid is None:
        grid = default_grid(gamma_max(GroupProblem(design, weight_power)), n_gamma, ratio)
    grid = np.asarray(grid, dtype=float)
    if fold_designs is None:
        fold_designs = [design] * len(partition)
    elif len(fold_designs) != len(partition):
        raise ValueError("need one design per quadrat")
    jobs = [(fold_designs[k], k, grid, partition, weight_power, tol, max_iter) for k in range(len(partition))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_fold_job, jobs))
    else:
        out = [_fold_job(j) for j in jobs]
    converged = np.array([c for _, c in out])
    dropped = [k for k in range(len(partition)) if not converged[k].any()]
    for k in dropped:
        log.warning("fold %d dropped: no grid point converged", k + 1)
    if len(dropped) == len(partition):
        raise RuntimeError("every cross-validation fold failed to converge")
    results = {}
    for kind in kinds:
        residuals = np.array([h_residual(fold_designs[k], partition.eroded[k], thetas, kind, type_weights)
                              for k, (thetas, _) in enumerate(out)])
        residuals[dropped] = np.nan
        risk = np.nanmean(residuals ** 2, axis=0)
        idx = select_gamma(grid, risk)
        results[kind] = CVResult(kind, grid, residuals, risk, float(grid[idx]), idx, partition,
                                 list(dropped), converged)
    return results


def cv_select(design: DesignData, partition: Partition, kind: str = INVERSE, grid=None, **kw) -> CVResult:
    """Cross-validated penalty for one residual kind."""
    return cv_select_all(design, partition, (kind,), grid, **kw)[kind]
