"""Seeded pattern generators: Poisson, Thomas clusters and fixed-count Gibbs MH."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numba
import numpy as np

from .model import CovariateField, ModelSpec, ThetaLayout
from .pattern import MultiTypePattern, Window

log = logging.getLogger(__name__)


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator keyed by ``seed`` and a path of names or integers."""
    key = [int(seed)]
    for n in names:
        key.append(int(n) if isinstance(n, (int, np.integer)) else zlib.crc32(str(n).encode()))
    return np.random.default_rng(np.random.SeedSequence(key))


# -- Poisson -----------------------------------------------------------------

def sim_poisson(window: Window, rng, n: int | None = None, intensity: float | None = None) -> np.ndarray:
    """Binomial pattern of ``n`` points, or Poisson with the given intensity."""
    if (n is None) == (intensity is None):
        raise ValueError("give exactly one of n and intensity")
    if n is None:
        if intensity < 0:
            raise ValueError("intensity must be non-negative")
        n = rng.poisson(intensity * window.area())
    if n < 0:
        raise ValueError("n must be non-negative")
    u = rng.random((int(n), 2))
    return np.column_stack([window.x_min + u[:, 0] * window.width, window.y_min + u[:, 1] * window.height])


def _field_eval(field, xy):
    if isinstance(field, CovariateField):
        return field.value_at(xy)
    return np.asarray(field(xy), dtype=float)


def sim_ipp(window: Window, field, n: int, rng, fmax: float | None = None) -> np.ndarray:
    """``n`` independent points with density proportional to ``field`` on ``window``.

    ``field`` is a raster or a vectorised callable; rejection sampling uses
    the raster maximum (or ``fmax`` for callables).
    """
    if isinstance(field, CovariateField):
        vals = field.values
        if np.any(vals < 0):
            raise ValueError("intensity field must be non-negative")
        fmax = float(vals.max())
    elif fmax is None:
        raise ValueError("fmax is required for callable fields")
    if not fmax > 0:
        raise ValueError("intensity field is identically zero")
    out = np.empty((0, 2))
    if n == 0:
        return out
    chunks, got = [], 0
    tries = 0
    while got < n:
        m = max(64, int(1.5 * (n - got)) + 16)
        cand = sim_poisson(window, rng, n=m)
        f = _field_eval(field, cand)
        if np.any(f < 0):
            raise ValueError("intensity field must be non-negative")
        keep = cand[rng.random(m) * fmax < f]
        chunks.append(keep)
        got += len(keep)
        tries += 1
        if tries > 10000 and got == 0:
            raise ValueError("intensity field is zero on the window")
    return np.vstack(chunks)[:n]


# -- Thomas ------------------------------------------------------------------

@dataclass(frozen=True)
class ThomasSpec:
    """Parent intensity ``kappa`` (or a fixed parent count), mean offspring ``mu``, dispersal sd ``sigma``.

    With ``parent_field`` parents are drawn on the window with density
    proportional to the field; their number is Poisson(kappa |W|) unless
    ``n_parents`` is set.
    """

    mu: float
    sigma: float
    kappa: float | None = None
    n_parents: int | None = None
    parent_field: CovariateField | None = None

    def __post_init__(self):
        if not (self.mu > 0 and self.sigma > 0):
            raise ValueError("mu and sigma must be positive")
        if (self.kappa is None) == (self.n_parents is None):
            raise ValueError("give exactly one of kappa and n_parents")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be positive")


def sim_thomas(window: Window, spec: ThomasSpec, rng) -> np.ndarray:
    if spec.parent_field is None:
        r = 4.0 * spec.sigma
        big = Window(window.x_min - r, window.x_max + r, window.y_min - r, window.y_max + r)
        if spec.n_parents is None:
            parents = sim_poisson(big, rng, intensity=spec.kappa)
        else:
            parents = sim_poisson(big, rng, n=spec.n_parents)
    else:
        k = spec.n_parents if spec.n_parents is not None else rng.poisson(spec.kappa * window.area())
        parents = sim_ipp(window, spec.parent_field, int(k), rng)
    sizes = rng.poisson(spec.mu, len(parents))
    kids = np.repeat(parents, sizes, axis=0) + rng.normal(scale=spec.sigma, size=(int(sizes.sum()), 2))
    return kids[window.contains(kids)]


# -- fixed-count Metropolis-Hastings ------------------------------------------

@numba.njit(cache=True)
def _annulus(radii, steps, ti, tj, d):
    ns = steps[ti, tj]
    if ns == 0:
        return -1
    if d <= radii[ti, tj, 0]:
        return 0
    for k in range(1, ns):
        if d <= radii[ti, tj, k]:
            return k
    return -1


@numba.njit(cache=True)
def _cell(x, y, x0, y0, cw, ch, nx, ny):
    ix = int((x - x0) / cw)
    iy = int((y - y0) / ch)
    if ix < 0:
        ix = 0
    if ix >= nx:
        ix = nx - 1
    if iy < 0:
        iy = 0
    if iy >= ny:
        iy = ny - 1
    return iy * nx + ix


@numba.njit(cache=True)
def _log_lambda(ux, uy, ti, excl, xy, types, N, head, nxt, grid, radii, steps, caps, beta,
                trend, tgrid, ne, acc):
    """Interaction part plus trend of log lambda((u, ti); X minus point ``excl``)."""
    x0, y0, cw, ch = grid[0], grid[1], grid[2], grid[3]
    nx, ny = int(grid[4]), int(grid[5])
    p = steps.shape[0]
    kmax = radii.shape[2]
    for j in range(p):
        for k in range(kmax):
            ne[j, k] = 0
            acc[j, k] = 0
    cx = min(max(int((ux - x0) / cw), 0), nx - 1)
    cy = min(max(int((uy - y0) / ch), 0), ny - 1)
    for gy in range(max(cy - 1, 0), min(cy + 2, ny)):
        for gx in range(max(cx - 1, 0), min(cx + 2, nx)):
            y = head[gy * nx + gx]
            while y >= 0:
                if y != excl:
                    tj = types[y]
                    d = np.hypot(xy[y, 0] - ux, xy[y, 1] - uy)
                    k = _annulus(radii, steps, ti, tj, d)
                    if k >= 0:
                        ne[tj, k] += 1
                        m = N[y, ti, k]
                        if excl >= 0:
                            dx = np.hypot(xy[y, 0] - xy[excl, 0], xy[y, 1] - xy[excl, 1])
                            if types[excl] == ti and _annulus(radii, steps, tj, ti, dx) == k:
                                m -= 1
                        if m < caps[tj, ti, k]:
                            acc[tj, k] += 1
                y = nxt[y]
    total = 0.0
    for j in range(p):
        for k in range(steps[ti, j]):
            c = caps[ti, j, k]
            own = ne[j, k] if ne[j, k] < c else c
            total += beta[ti, j, k] * (own + acc[j, k])
    if trend.shape[0] > 0:
        tx = min(max(int((ux - tgrid[0]) / tgrid[2]), 0), trend.shape[2] - 1)
        ty = min(max(int((uy - tgrid[1]) / tgrid[3]), 0), trend.shape[1] - 1)
        total += trend[ti, ty, tx]
    return total


@numba.njit(cache=True)
def _unlink(a, cell_of, head, nxt, prv):
    c = cell_of[a]
    if prv[a] >= 0:
        nxt[prv[a]] = nxt[a]
    else:
        head[c] = nxt[a]
    if nxt[a] >= 0:
        prv[nxt[a]] = prv[a]
    nxt[a] = -1
    prv[a] = -1


@numba.njit(cache=True)
def _link(a, c, cell_of, head, nxt, prv):
    cell_of[a] = c
    nxt[a] = head[c]
    prv[a] = -1
    if head[c] >= 0:
        prv[head[c]] = a
    head[c] = a


@numba.njit(cache=True)
def _shift_counts(a, px, py, sign, xy, types, N, head, nxt, grid, radii, steps):
    """Add ``sign`` to the counts of every neighbour of ``a`` placed at (px, py)."""
    x0, y0, cw, ch = grid[0], grid[1], grid[2], grid[3]
    nx, ny = int(grid[4]), int(grid[5])
    ti = types[a]
    cx = min(max(int((px - x0) / cw), 0), nx - 1)
    cy = min(max(int((py - y0) / ch), 0), ny - 1)
    for gy in range(max(cy - 1, 0), min(cy + 2, ny)):
        for gx in range(max(cx - 1, 0), min(cx + 2, nx)):
            y = head[gy * nx + gx]
            while y >= 0:
                if y != a:
                    tj = types[y]
                    d = np.hypot(xy[y, 0] - px, xy[y, 1] - py)
                    k = _annulus(radii, steps, tj, ti, d)
                    if k >= 0:
                        N[y, ti, k] += sign
                        if sign > 0:
                            N[a, tj, k] += 1
                y = nxt[y]


@numba.njit(cache=True)
def _init_counts(xy, types, N, head, nxt, grid, radii, steps):
    x0, y0, cw, ch = grid[0], grid[1], grid[2], grid[3]
    nx, ny = int(grid[4]), int(grid[5])
    for a in range(xy.shape[0]):
        ti = types[a]
        cx = min(max(int((xy[a, 0] - x0) / cw), 0), nx - 1)
        cy = min(max(int((xy[a, 1] - y0) / ch), 0), ny - 1)
        for gy in range(max(cy - 1, 0), min(cy + 2, ny)):
            for gx in range(max(cx - 1, 0), min(cx + 2, nx)):
                y = head[gy * nx + gx]
                while y >= 0:
                    if y != a:
                        tj = types[y]
                        k = _annulus(radii, steps, ti, tj, np.hypot(xy[y, 0] - xy[a, 0], xy[y, 1] - xy[a, 1]))
                        if k >= 0:
                            N[a, tj, k] += 1
                    y = nxt[y]


@numba.njit(cache=True)
def _move(a, nxp, nyp, xy, types, N, head, nxt, prv, cell_of, grid, radii, steps):
    _shift_counts(a, xy[a, 0], xy[a, 1], -1, xy, types, N, head, nxt, grid, radii, steps)
    _unlink(a, cell_of, head, nxt, prv)
    xy[a, 0] = nxp
    xy[a, 1] = nyp
    for j in range(N.shape[1]):
        for k in range(N.shape[2]):
            N[a, j, k] = 0
    c = _cell(nxp, nyp, grid[0], grid[1], grid[2], grid[3], int(grid[4]), int(grid[5]))
    _link(a, c, cell_of, head, nxt, prv)
    _shift_counts(a, nxp, nyp, 1, xy, types, N, head, nxt, grid, radii, steps)


@numba.njit(cache=True)
def _sweep(pick, ux, uy, logu, xy, types, N, head, nxt, prv, cell_of, grid, radii, steps, caps,
           beta, trend, tgrid, ne, acc):
    accepted = 0
    dlog = 0.0
    for s in range(pick.shape[0]):
        a = pick[s]
        ti = types[a]
        new = _log_lambda(ux[s], uy[s], ti, a, xy, types, N, head, nxt, grid, radii, steps, caps,
                          beta, trend, tgrid, ne, acc)
        old = _log_lambda(xy[a, 0], xy[a, 1], ti, a, xy, types, N, head, nxt, grid, radii, steps,
                          caps, beta, trend, tgrid, ne, acc)
        delta = new - old
        if delta >= 0 or logu[s] < delta:
            _move(a, ux[s], uy[s], xy, types, N, head, nxt, prv, cell_of, grid, radii, steps)
            accepted += 1
            dlog += delta
    return accepted, dlog


class GibbsSampler:
    """Fixed-count relocation MH chain for the multitype Gibbs model.

    ``theta`` follows the model's parameter layout.  Covariate trends are
    read from rasters sharing one grid; the intercepts cancel under fixed
    counts and are ignored.
    """

    def __init__(self, spec: ModelSpec, theta, counts, window: Window, rng, covariates=(), init=None):
        layout = ThetaLayout(spec)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (layout.size,):
            raise ValueError(f"theta must have length {layout.size}")
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (spec.p,) or np.any(counts < 0):
            raise ValueError("counts must be a non-negative vector of length p")
        self.spec, self.layout, self.window, self.rng = spec, layout, window, rng
        p, kmax = spec.p, max(1, spec.max_steps)
        self.beta = np.zeros((p, p, kmax))
        for i in range(p):
            for j in range(p):
                if spec.steps[i, j]:
                    self.beta[i, j, :spec.steps[i, j]] = layout.beta(theta, i, j)
        self.radii = np.ascontiguousarray(spec.radii[:, :, :kmax], dtype=float)
        self.steps = np.ascontiguousarray(spec.steps, dtype=np.int64)
        caps = spec.caps[:, :, :kmax].astype(np.int64)
        self.caps = np.ascontiguousarray(caps)
        covariates = list(covariates)
        if len(covariates) != spec.n_covariates:
            raise ValueError("covariate count does not match the model")
        if covariates:
            base = covariates[0]
            if not all(c.same_grid(base) for c in covariates):
                raise ValueError("covariate rasters must share a grid for simulation")
            coef = np.array([layout.alpha(theta, i)[1:] for i in range(p)])
            stack = np.array([c.values for c in covariates])
            self.trend = np.ascontiguousarray(np.tensordot(coef, stack, axes=(1, 0)))
            self.tgrid = np.array([base.x0, base.y0, base.dx, base.dy])
        else:
            self.trend = np.zeros((0, 1, 1))
            self.tgrid = np.zeros(4)
        reach = spec.max_range if np.isfinite(spec.max_range) and spec.max_range > 0 else max(window.width, window.height)
        nx = max(1, int(window.width // reach))
        ny = max(1, int(window.height // reach))
        self.grid = np.array([window.x_min, window.y_min, window.width / nx, window.height / ny, nx, ny], dtype=float)
        if init is None:
            xy = sim_poisson(window, rng, n=int(counts.sum()))
            types = np.repeat(np.arange(p), counts)
        else:
            if not np.array_equal(init.counts, counts):
                raise ValueError("initial pattern counts differ from counts")
            xy, types = init.xy, init.types
        self.xy = np.array(xy, dtype=float).reshape(-1, 2)
        self.types = np.ascontiguousarray(types, dtype=np.int64)
        n = len(self.types)
        self.N = np.zeros((n, p, kmax), dtype=np.int64)
        self.head = -np.ones(nx * ny, dtype=np.int64)
        self.nxt = -np.ones(n, dtype=np.int64)
        self.prv = -np.ones(n, dtype=np.int64)
        self.cell_of = np.zeros(n, dtype=np.int64)
        for a in range(n):
            c = _cell(self.xy[a, 0], self.xy[a, 1], *self.grid[:4], nx, ny)
            _link(a, c, self.cell_of, self.head, self.nxt, self.prv)
        _init_counts(self.xy, self.types, self.N, self.head, self.nxt, self.grid, self.radii, self.steps)
        self._ne = np.zeros((p, kmax), dtype=np.int64)
        self._acc = np.zeros((p, kmax), dtype=np.int64)
        self.trace = [0.0]
        self.accepted = 0
        self.proposed = 0

    def __len__(self):
        return len(self.types)

    def log_lambda(self, xy, t: int, exclude: int = -1) -> float:
        return _log_lambda(float(xy[0]), float(xy[1]), int(t), int(exclude), self.xy, self.types, self.N,
                           self.head, self.nxt, self.grid, self.radii, self.steps, self.caps, self.beta,
                           self.trend, self.tgrid, self._ne, self._acc)

    def delta(self, a: int, xy) -> float:
        """Log density change of moving point ``a`` to ``xy``."""
        t = int(self.types[a])
        return self.log_lambda(xy, t, a) - self.log_lambda(self.xy[a], t, a)

    def move(self, a: int, xy) -> None:
        _move(int(a), float(xy[0]), float(xy[1]), self.xy, self.types, self.N, self.head, self.nxt,
              self.prv, self.cell_of, self.grid, self.radii, self.steps)

    def run(self, sweeps: int) -> None:
        n = len(self)
        if n == 0:
            return
        w = self.window
        for _ in range(int(sweeps)):
            pick = self.rng.integers(0, n, n)
            u = self.rng.random((n, 3))
            ux = w.x_min + u[:, 0] * w.width
            uy = w.y_min + u[:, 1] * w.height
            with np.errstate(divide="ignore"):
                logu = np.log(u[:, 2])
            acc, dlog = _sweep(pick, ux, uy, logu, self.xy, self.types, self.N, self.head, self.nxt,
                               self.prv, self.cell_of, self.grid, self.radii, self.steps, self.caps,
                               self.beta, self.trend, self.tgrid, self._ne, self._acc)
            self.accepted += acc
            self.proposed += n
            self.trace.append(self.trace[-1] + dlog)

    def pattern(self) -> MultiTypePattern:
        return MultiTypePattern(self.xy.copy(), self.types.copy(), self.spec.p, self.window)


def sim_gibbs_fixed_n(spec: ModelSpec, theta, counts, window: Window, rng, sweeps: int = 500,
                      covariates=(), return_sampler: bool = False):
    """Relocation MH with fixed per-type counts, started from a binomial pattern."""
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    s = GibbsSampler(spec, theta, counts, window, rng, covariates)
    s.run(sweeps)
    log.debug("MH acceptance %.3f over %d proposals", s.accepted / max(s.proposed, 1), s.proposed)
    return (s.pattern(), s) if return_sampler else s.pattern()
