"""Principal-component reduction of covariate rasters."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import CovariateField

log = logging.getLogger(__name__)


@dataclass
class PCAResult:
    fields: list
    explained: np.ndarray  # cumulative variance fraction of the kept components
    loadings: np.ndarray  # k x m, rows are component directions over the kept rasters
    kept: list  # names of the rasters used
    dropped: list


def pca_covariates(rasters, k: int) -> PCAResult:
    """Standardise rasters over cells and keep the ``k`` leading component maps.

    Component maps are the left singular vectors scaled by their singular
    values, so ``maps @ loadings`` reconstructs the standardised matrix.
    """
    rasters = list(rasters)
    if not rasters:
        raise ValueError("no rasters given")
    base = rasters[0]
    if not all(r.same_grid(base) for r in rasters):
        raise ValueError("rasters must share grid geometry")
    cols, kept, dropped = [], [], []
    for idx, r in enumerate(rasters):
        v = r.values.ravel()
        sd = v.std()
        name = r.name or f"raster_{idx + 1}"
        if sd == 0:
            log.warning("raster %s is constant and is dropped", name)
            dropped.append(name)
            continue
        cols.append((v - v.mean()) / sd)
        kept.append(name)
    if not 1 <= k <= len(cols):
        raise ValueError(f"k must be between 1 and the number of usable rasters ({len(cols)})")
    Z = np.column_stack(cols)
    U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    # fix signs so that each loading vector has a positive largest entry
    flip = np.sign(Vt[np.arange(len(S)), np.argmax(np.abs(Vt), axis=1)])
    U, Vt = U * flip, Vt * flip[:, None]
    scores = U[:, :k] * S[:k]
    frac = np.cumsum(S ** 2) / np.sum(S ** 2)
    fields = [base.with_values(scores[:, c].reshape(base.shape), f"pc{c + 1}") for c in range(k)]
    return PCAResult(fields, frac[:k], Vt[:k], kept, dropped)
