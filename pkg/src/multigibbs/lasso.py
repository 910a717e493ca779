"""Group-lasso penalised logistic pseudo-likelihood along a penalty path.

Maximises ``loglik(theta) - gamma * sum_g w_g ||theta_g||`` over penalised
groups ``g`` (interaction vectors) with unpenalised covariate blocks.  The
default weight is ``w_g = |g|**-0.5``; ``weight_power=0.5`` gives the
conventional ``sqrt(|g|)`` weighting.

Proximal Newton iterations on a working set of groups: the penalised
second-order model is minimised by block coordinate descent with exact group
updates, and a backtracking line search keeps the objective decreasing.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit

from .design import DesignData, loglik_from_eta

log = logging.getLogger(__name__)

INVERSE_SQRT_WEIGHTS = -0.5
SQRT_WEIGHTS = 0.5


class SolverError(RuntimeError):
    pass


class _Block:
    __slots__ = ("cols", "rows", "X", "penalized", "weight", "start", "size")


class GroupProblem:
    """Per-group dense blocks of a design, ready for coordinate descent."""

    def __init__(self, design: DesignData, weight_power: float = INVERSE_SQRT_WEIGHTS):
        self.design = design
        self.layout = design.layout
        self.t = np.asarray(design.t, dtype=float)
        self.offset = np.asarray(design.offset, dtype=float)
        self.B = design.B.tocsr()
        self.BT = self.B.T.tocsr()
        self.csc = self.B.tocsc()
        self.weight_power = weight_power
        csc = self.csc
        self.blocks: list[_Block] = []
        for g in self.layout.groups:
            b = _Block()
            b.start, b.size = g.start, g.size
            b.cols = np.arange(g.start, g.start + g.size)
            sub = csc[:, g.slice]
            b.rows = np.unique(sub.indices)
            b.X = np.ascontiguousarray(sub.tocsr()[b.rows].toarray())
            b.penalized = g.penalized
            b.weight = float(g.size) ** weight_power if g.penalized else 0.0
            self.blocks.append(b)
        self.penalized = np.array([b.penalized for b in self.blocks])
        self.weights = np.array([b.weight for b in self.blocks])
        self.starts = np.array([b.start for b in self.blocks], dtype=np.int64)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def start_theta(self) -> np.ndarray:
        """Intercepts at the constant-intensity fit ``rho n / m`` per type, all else zero."""
        theta = np.zeros(self.n_params)
        types = np.asarray(self.design.types)
        for i, col in enumerate(self.layout.alpha_start):
            n = np.sum((types == i) & (self.t == 1))
            m = np.sum((types == i) & (self.t == 0))
            if m > 0:
                theta[col] = np.log(max(n, 0.5) * self.design.rho[i] / m)
        return theta

    def eta(self, theta) -> np.ndarray:
        return self.B @ theta + self.offset

    def gradient_from_eta(self, eta) -> np.ndarray:
        return self.BT @ (self.t - expit(eta))

    def group_norms(self, vec) -> np.ndarray:
        sq = np.add.reduceat(np.asarray(vec) ** 2, self.starts) if len(vec) else np.zeros(0)
        return np.sqrt(sq)

    def penalty(self, theta, gamma: float) -> float:
        if gamma == 0:
            return 0.0
        return float(gamma * np.sum(self.weights * self.group_norms(theta)))

    def kkt(self, theta, grad, gamma: float) -> np.ndarray:
        """Per-group KKT violation."""
        out = np.zeros(len(self.blocks))
        gnorm = self.group_norms(grad)
        tnorm = self.group_norms(theta)
        for gi, b in enumerate(self.blocks):
            sl = slice(b.start, b.start + b.size)
            if not b.penalized:
                out[gi] = np.max(np.abs(grad[sl])) if b.size else 0.0
            elif tnorm[gi] > 0:
                out[gi] = np.linalg.norm(grad[sl] - gamma * b.weight * theta[sl] / tnorm[gi])
            else:
                out[gi] = max(0.0, gnorm[gi] - gamma * b.weight)
        return out


@numba.njit(cache=True)
def _group_solve(q, V, c, lam, y):
    """Write into ``y`` the minimiser of ``y'Ay/2 + c'y + lam ||y||`` with ``A = V diag(q) V'``."""
    k = len(q)
    ct = np.zeros(k)
    qmax = 0.0
    for a in range(k):
        acc = 0.0
        for r in range(k):
            acc += V[r, a] * c[r]
        ct[a] = acc
        qmax = max(qmax, q[a])
    floor = 1e-12 * max(qmax, 1e-300)
    for r in range(k):
        y[r] = 0.0
    if lam == 0.0:
        for a in range(k):
            if q[a] > floor:
                f = ct[a] / q[a]
                for r in range(k):
                    y[r] -= V[r, a] * f
        return
    nc = 0.0
    for r in range(k):
        nc += c[r] * c[r]
    nc = np.sqrt(nc)
    if nc <= lam:
        return
    qlo, qhi = np.inf, 0.0
    for a in range(k):
        qq = max(q[a], floor)
        qlo = min(qlo, qq)
        qhi = max(qhi, qq)
    # s = lam / ||y|| is the root of phi(s) = sum (ct / (q + s))^2 - (lam / s)^2,
    # bracketed by the extreme eigenvalues; safeguarded Newton on that bracket
    lo = lam * qlo / (nc - lam)
    hi = lam * qhi / (nc - lam)
    s = 0.5 * (lo + hi)
    if hi > lo:
        for _ in range(100):
            phi = 0.0
            dphi = 0.0
            for a in range(k):
                den = max(q[a], floor) + s
                u = ct[a] * ct[a] / (den * den)
                phi += u
                dphi -= 2.0 * u / den
            phi -= (lam / s) ** 2
            dphi += 2.0 * lam * lam / (s * s * s)
            if phi > 0:
                hi = s
            else:
                lo = s
            step = s - phi / dphi if dphi != 0.0 else 0.5 * (lo + hi)
            if not (lo < step < hi):
                step = 0.5 * (lo + hi)
            if abs(step - s) <= 1e-15 * s or hi - lo <= 1e-15 * hi:
                s = step
                break
            s = step
    else:
        s = lo
    for a in range(k):
        f = ct[a] / (max(q[a], floor) + s)
        for r in range(k):
            y[r] -= V[r, a] * f


@numba.njit(cache=True)
def _inner_bcd(Q, g, x0, starts, sizes, lam, tol, max_sweeps):
    """Block coordinate descent on ``g'(x - x0) + (x - x0)'Q(x - x0)/2 + sum lam_k ||x_k||``."""
    ng = len(starts)
    n = len(x0)
    x = x0.copy()
    grad = g.copy()  # gradient of the quadratic part at x
    mmax = 1
    for k in range(ng):
        mmax = max(mmax, sizes[k])
    evals = np.zeros(n)
    evecs = np.zeros((ng, mmax, mmax))
    qtop = np.zeros(ng)
    for k in range(ng):
        a, m = starts[k], sizes[k]
        if m == 0:
            continue
        w, v = np.linalg.eigh(np.ascontiguousarray(Q[a:a + m, a:a + m]))
        for i in range(m):
            evals[a + i] = max(w[i], 0.0)
            qtop[k] = max(qtop[k], evals[a + i])
        evecs[k, :m, :m] = v
    c = np.zeros(mmax)
    y = np.zeros(mmax)
    d = np.zeros(mmax)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for k in range(ng):
            a, m = starts[k], sizes[k]
            if m == 0:
                continue
            for i in range(m):
                acc = grad[a + i]
                for j in range(m):
                    acc -= Q[a + i, a + j] * x[a + j]
                c[i] = acc
            _group_solve(evals[a:a + m], evecs[k, :m, :m], c[:m], lam[k], y[:m])
            nd = 0.0
            for i in range(m):
                d[i] = y[i] - x[a + i]
                nd = max(nd, abs(d[i]))
            if nd > 0.0:
                for j in range(m):
                    x[a + j] = y[j]
                    dj = d[j]
                    if dj != 0.0:
                        for r in range(n):
                            grad[r] += Q[r, a + j] * dj
                change = max(change, nd * max(qtop[k], 1e-300))
        if change < tol:
            break
    return x, sweeps


@numba.njit(cache=True)
def _gram(indptr, indices, data, w, colmap, size):
    """``B_S' diag(w) B_S`` for the columns with ``colmap >= 0``, from CSR arrays."""
    Q = np.zeros((size, size))
    for r in range(len(indptr) - 1):
        wr = w[r]
        if wr == 0.0:
            continue
        for p1 in range(indptr[r], indptr[r + 1]):
            i = colmap[indices[p1]]
            if i < 0:
                continue
            vi = data[p1] * wr
            for p2 in range(indptr[r], indptr[r + 1]):
                j = colmap[indices[p2]]
                if j >= 0:
                    Q[i, j] += vi * data[p2]
    return Q


@dataclass
class FitResult:
    theta: np.ndarray
    gamma: float
    active: np.ndarray  # e_g for every group of the layout (alpha groups always 0)
    loglik: float
    objective: float  # -loglik + penalty, the minimised quantity
    iterations: int
    kkt: float
    converged: bool
    history: list = field(default_factory=list)
    df: float = float("nan")

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.df


def fit_group_lasso(problem: GroupProblem, gamma: float, theta0=None, tol: float = 1e-7,
                    kkt_tol: float = 1e-5, max_iter: int = 500, pin_penalized: bool = False) -> FitResult:
    """Solve at one penalty level by working-set proximal Newton steps.

    Each outer iteration minimises the penalised second-order model of the
    loss on the working set by block coordinate descent, then backtracks
    along the resulting direction until the true objective drops enough.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    blocks = problem.blocks
    theta = problem.start_theta() if theta0 is None else np.array(theta0, dtype=float)
    if pin_penalized:
        for b in blocks:
            if b.penalized:
                theta[b.start:b.start + b.size] = 0.0
    eta = problem.eta(theta)
    t = problem.t
    in_work = np.array([not b.penalized or bool(np.any(theta[b.start:b.start + b.size] != 0))
                        for b in blocks], dtype=bool)
    lam_all = gamma * problem.weights
    kkt_scale = np.maximum(1.0, lam_all)
    obj = -loglik_from_eta(t, eta) + problem.penalty(theta, gamma)
    history = [obj]
    converged = False
    kkt = np.inf
    it = 0
    inner_tol = 0.05 * kkt_tol
    damp = 0.0  # Levenberg-Marquardt factor, raised when the line search fails
    while it < max_iter:
        it += 1
        work = np.flatnonzero(in_work)
        cols = np.concatenate([np.arange(blocks[g].start, blocks[g].start + blocks[g].size) for g in work]) \
            if work.size else np.zeros(0, dtype=np.int64)
        sizes = np.array([blocks[g].size for g in work], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        mu = expit(eta)
        grad_s = -(problem.BT @ (t - mu))[cols]
        colmap = np.full(problem.n_params, -1, dtype=np.int64)
        colmap[cols] = np.arange(len(cols))
        B = problem.B
        Q = _gram(B.indptr, B.indices, B.data, mu * (1 - mu), colmap, len(cols))
        diag = np.diag(Q).copy()
        Q[np.diag_indices_from(Q)] += damp * diag + 1e-12 * max(float(diag.mean()) if len(Q) else 0.0, 1e-300)
        x0 = theta[cols]
        x, _ = _inner_bcd(Q, grad_s, x0, starts, sizes, lam_all[work], inner_tol, 10000)
        d = x - x0
        pen_s = lambda v: float(np.sum(lam_all[work] * np.sqrt(np.add.reduceat(v * v, starts)))) \
            if len(v) else 0.0
        delta = float(grad_s @ d) + pen_s(x) - pen_s(x0)
        prev = obj
        if np.any(d != 0):
            d_full = np.zeros(problem.n_params)
            d_full[cols] = d
            dx = B @ d_full
            tiny = abs(delta) <= 1e-10 * max(1.0, abs(obj))
            a = 1.0
            for _ in range(30 if delta < 0 else 0):
                trial = theta.copy()
                trial[cols] = x0 + a * d
                new_obj = -loglik_from_eta(t, eta + a * dx) + problem.penalty(trial, gamma)
                if new_obj <= obj + 1e-4 * a * delta:
                    theta, eta, obj = trial, eta + a * dx, new_obj
                    damp = damp / 10 if damp > 1e-8 else 0.0
                    break
                a *= 0.5
            else:
                if tiny:
                    # predicted change below rounding: take the full step
                    theta[cols] = x
                    eta = eta + dx
                    obj = -loglik_from_eta(t, eta) + problem.penalty(theta, gamma)
                else:
                    damp = max(10 * damp, 1e-4)
                    history.append(obj)
                    continue
        history.append(obj)
        rel = abs(prev - obj) / max(1.0, abs(obj))
        if rel >= tol and it < max_iter:
            continue
        grad = problem.gradient_from_eta(eta)
        # relative to the group's penalty: the gradient sum carries rounding error of that size
        viol = problem.kkt(theta, grad, gamma) / kkt_scale
        if pin_penalized:
            viol[problem.penalized] = 0.0
        kkt = float(viol[in_work].max()) if in_work.any() else 0.0
        if kkt >= kkt_tol:
            continue
        # working set solved; admit groups that violate the optimality conditions
        entering = np.flatnonzero(~in_work & (viol > kkt_tol))
        if entering.size:
            in_work[entering] = True
            continue
        kkt = float(viol.max()) if viol.size else 0.0
        converged = True
        break
    if not converged:
        log.warning("group lasso at gamma=%.4g stopped after %d iterations (KKT %.2e)", gamma, it, kkt)
    norms = problem.group_norms(theta)
    active = (norms > 0) & problem.penalized
    return FitResult(theta=theta, gamma=float(gamma), active=active.astype(np.int8),
                     loglik=loglik_from_eta(t, eta), objective=obj, iterations=it, kkt=kkt,
                     converged=converged, history=history)


def unpenalized_fit(problem: GroupProblem, **kw) -> FitResult:
    """Fit with every penalised group pinned at zero."""
    fit = fit_group_lasso(problem, 0.0, pin_penalized=True, **kw)
    if not fit.converged:
        raise SolverError(f"unpenalised fit did not converge: {fit.iterations} sweeps, KKT {fit.kkt:.3e}")
    return fit


def gamma_max(problem_or_design, weight_power: float = INVERSE_SQRT_WEIGHTS, **kw) -> float:
    """Smallest penalty at which every penalised group is zero."""
    problem = _as_problem(problem_or_design, weight_power)
    if not problem.penalized.any():
        return 0.0
    kw.setdefault("tol", 1e-13)
    kw.setdefault("kkt_tol", 1e-8)
    fit = unpenalized_fit(problem, **kw)
    grad = problem.gradient_from_eta(problem.eta(fit.theta))
    norms = problem.group_norms(grad)
    pen = problem.penalized
    return float(np.max(norms[pen] / problem.weights[pen]))


def _as_problem(obj, weight_power=INVERSE_SQRT_WEIGHTS) -> GroupProblem:
    if isinstance(obj, GroupProblem):
        return obj
    return GroupProblem(obj, weight_power)


def effective_df(problem: GroupProblem, fit: FitResult) -> float:
    """Unpenalised count plus ``1 + (|g|-1) ||theta_g|| / ||theta~_g||`` per active group.

    ``theta~_g`` is the group's unpenalised Newton solution at the fit, other
    groups held fixed.
    """
    df = float(sum(b.size for b in problem.blocks if not b.penalized))
    eta = problem.eta(fit.theta)
    for gi, b in enumerate(problem.blocks):
        if not (b.penalized and fit.active[gi]):
            continue
        sl = slice(b.start, b.start + b.size)
        if b.size == 1:
            df += 1.0
            continue
        mu = expit(eta[b.rows])
        w = mu * (1 - mu)
        H = b.X.T @ (b.X * w[:, None])
        grad_g = b.X.T @ (problem.t[b.rows] - mu)
        full = fit.theta[sl] + np.linalg.pinv(H) @ grad_g
        nf = np.linalg.norm(full)
        ratio = np.linalg.norm(fit.theta[sl]) / nf if nf > 0 else 1.0
        df += 1.0 + (b.size - 1) * min(ratio, 1.0)
    return df


def default_grid(gmax: float, n: int = 100, ratio: float = 1e-3) -> np.ndarray:
    if gmax <= 0:
        return np.zeros(1)
    return gmax * np.logspace(0.0, np.log10(ratio), n)


@dataclass
class PenaltyPath:
    gammas: np.ndarray
    fits: list
    gamma_max: float
    group_names: list

    @property
    def thetas(self) -> np.ndarray:
        return np.array([f.theta for f in self.fits])

    @property
    def active(self) -> np.ndarray:
        return np.array([f.active for f in self.fits])

    @property
    def aic(self) -> np.ndarray:
        return np.array([f.aic for f in self.fits])

    @property
    def df(self) -> np.ndarray:
        return np.array([f.df for f in self.fits])

    def index_of(self, gamma: float) -> int:
        hits = np.flatnonzero(self.gammas == gamma)
        if not hits.size:
            raise KeyError(f"gamma {gamma} is not on the grid")
        return int(hits[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gamma", "objective", "loglik", "df", "aic", "converged", "iterations", "active_groups"])
            for g, f in zip(self.gammas, self.fits):
                names = [self.group_names[i] for i in np.flatnonzero(f.active)]
                w.writerow([repr(float(g)), repr(f.objective), repr(f.loglik), repr(f.df), repr(f.aic),
                            int(f.converged), f.iterations, ";".join(names)])


def fit_path(problem_or_design, grid=None, tol: float = 1e-7, kkt_tol: float = 1e-5,
             max_iter: int = 500, weight_power: float = INVERSE_SQRT_WEIGHTS, n_gamma: int = 100,
             ratio: float = 1e-3, compute_df: bool = True, gmax: float | None = None) -> PenaltyPath:
    """Warm-started solutions over a decreasing penalty grid."""
    problem = _as_problem(problem_or_design, weight_power)
    if gmax is None:
        gmax = gamma_max(problem, max_iter=max_iter)
    grid = default_grid(gmax, n_gamma, ratio) if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(np.diff(grid) > 0):
        raise ValueError("penalty grid must be non-negative and decreasing")
    fits = []
    theta = None
    for g in grid:
        fit = fit_group_lasso(problem, float(g), theta, tol=tol, kkt_tol=kkt_tol, max_iter=max_iter)
        if compute_df:
            fit.df = effective_df(problem, fit)
        fits.append(fit)
        theta = fit.theta
    return PenaltyPath(np.asarray(grid), fits, float(gmax), [g.name for g in problem.layout.groups])


def aic_gamma(path: PenaltyPath) -> float:
    """Grid point of minimal AIC; ties go to the smallest penalty."""
    aic = path.aic
    best = np.min(aic)
    idx = np.flatnonzero(aic <= best + 1e-12 * max(1.0, abs(best)))
    return float(np.min(path.gammas[idx]))


def aic05_rule(path: PenaltyPath) -> float:
    """Grid point nearest ``(gamma_AIC + gamma_max) / 2``."""
    target = 0.5 * (aic_gamma(path) + path.gamma_max)
    return float(path.gammas[int(np.argmin(np.abs(path.gammas - target)))])


def selected_groups(fit: FitResult, layout, scores: bool = False) -> np.ndarray:
    """Symmetric ``p x p`` matrix of detected intra/inter interactions."""
    M = np.zeros((layout.p, layout.p))
    for gi, g in enumerate(layout.groups):
        if not g.penalized:
            continue
        val = np.linalg.norm(fit.theta[g.slice]) if scores else float(fit.active[gi])
        M[g.i, g.j] = M[g.j, g.i] = val
    return M if scores else M.astype(np.int8)
