"""Multi-range multitype Strauss / saturation Gibbs model.

The interaction statistic of a marked location ``u = (x, i)`` against a data
pattern ``X`` (which must not contain ``u``) is, for every partner type ``j``
and annulus step ``k`` of the pair ``{i, j}``::

    omega_ijk = min(c_ijk, ne_k(u, X_j))
              + sum_{y in X_j, y in annulus k of u} 1[ne_k(y, X_i) < c_jik]

i.e. the change of the pair statistic ``s_ij + s_ji`` (``s_ii`` for
``i == j``) when ``u`` is added.  The Strauss family drops the caps, which
turns ``omega`` into twice the annulus count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.special import gammaincc

from .pattern import MultiTypePattern, Window, pairwise_distance

STRAUSS = "strauss"
SATURATION = "saturation"
FAMILIES = (STRAUSS, SATURATION)

# saturation level standing in for "never saturates"
NO_CAP = np.iinfo(np.int32).max


# ---------------------------------------------------------------------------
# Saturation rule


def poisson_cdf(k, a):
    """P(Y <= k) for Y ~ Poisson(a); zero for k < 0."""
    k = np.asarray(k, dtype=float)
    a = np.asarray(a, dtype=float)
    out = np.where(k < 0, 0.0, gammaincc(np.floor(np.maximum(k, 0)) + 1, a))
    out = np.where((k >= 0) & (a == 0), 1.0, out)
    return out if out.ndim else float(out)


def t_function(c: int, a: float) -> float:
    """Expected saturation statistic under independence for cap ``c``."""
    if c < 1 or a < 0:
        raise ValueError("need c >= 1 and a >= 0")
    f1 = poisson_cdf(c - 1, a)
    f2 = poisson_cdf(c - 2, a)
    return c * (1.0 - f1) + a * (f1 + f2)


def saturation_auto(n_j: int, annulus_area: float, window_area: float, epsilon: float = 0.01) -> int:
    """Smallest ``c`` with ``F_a(c) >= 1 - epsilon`` (floored at 1),
    where ``a = annulus_area * n_j / window_area``."""
    if n_j < 0 or annulus_area <= 0 or window_area <= 0:
        raise ValueError("need n_j >= 0 and positive areas")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    a = annulus_area * n_j / window_area
    if a == 0:
        return 1
    c = max(0, int(math.floor(a - 6 * math.sqrt(a))))
    while poisson_cdf(c, a) < 1 - epsilon:
        c += 1
    return max(1, c)


def annulus_areas(radii) -> np.ndarray:
    r = np.concatenate([[0.0], np.asarray(radii, dtype=float)])
    return np.pi * np.diff(r**2)


# ---------------------------------------------------------------------------
# Model specification


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Ranges, saturations and family of a p-type model.

    ``radii[i, j, :K[i, j]]`` holds the increasing range vector of the pair,
    padded with ``inf``; it is symmetric in ``(i, j)``.  ``caps[i, j, k]`` is
    the saturation of a type-``i`` point counting type-``j`` neighbours and
    need not be symmetric.
    """

    p: int
    family: str
    radii: np.ndarray
    steps: np.ndarray
    caps: np.ndarray
    n_covariates: int = 0
    epsilon: float = 0.01
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        radii = np.array(self.radii, dtype=float)
        steps = np.array(self.steps, dtype=np.int64)
        caps = np.array(self.caps, dtype=np.int64)
        p = self.p
        if radii.shape[:2] != (p, p) or steps.shape != (p, p) or caps.shape != radii.shape:
            raise ValueError("radii, steps and caps must be indexed by type pairs")
        if not np.array_equal(steps, steps.T):
            raise ValueError("range vectors must be shared by (i, j) and (j, i)")
        for i in range(p):
            for j in range(p):
                r = radii[i, j, : steps[i, j]]
                if np.any(r <= 0) or np.any(np.diff(r) <= 0):
                    raise ValueError(f"ranges of pair ({i}, {j}) must be positive and increasing")
                if not np.array_equal(r, radii[j, i, : steps[j, i]]):
                    raise ValueError("range vectors must be symmetric")
                if np.any(caps[i, j, : steps[i, j]] < 1):
                    raise ValueError("saturation levels must be >= 1")
                radii[i, j, steps[i, j]:] = np.inf
        if self.family == STRAUSS:
            caps[:] = NO_CAP
        for arr in (radii, steps, caps):
            arr.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "caps", caps)

    @property
    def max_steps(self) -> int:
        return self.radii.shape[2]

    @property
    def max_range(self) -> float:
        r = self.radii[np.isfinite(self.radii)]
        return float(r.max()) if r.size else 0.0

    def ranges(self, i: int, j: int) -> np.ndarray:
        return self.radii[i, j, : self.steps[i, j]]

    @classmethod
    def build(cls, p: int, ranges, family: str = SATURATION, saturation=1,
              n_covariates: int = 0, inter_ranges=None, epsilon: float = 0.01) -> "ModelSpec":
        """Construct a spec from range vectors.

        ``ranges`` is either one vector shared by every pair, a dict keyed by
        ``(i, j)`` with ``i <= j``, or, together with ``inter_ranges``, the
        vector used for intra-type pairs.  ``saturation`` is an int, an array
        shaped like ``caps``, or a dict keyed by ordered pairs.
        """
        table: dict[tuple[int, int], np.ndarray] = {}
        for i in range(p):
            for j in range(i, p):
                if isinstance(ranges, dict):
                    r = ranges.get((i, j), ranges.get((j, i), ()))
                elif inter_ranges is not None and i != j:
                    r = inter_ranges
                else:
                    r = ranges
                table[(i, j)] = np.atleast_1d(np.asarray(r, dtype=float))
        kmax = max([1] + [len(r) for r in table.values()])
        radii = np.full((p, p, kmax), np.inf)
        steps = np.zeros((p, p), dtype=np.int64)
        for (i, j), r in table.items():
            for a, b in ((i, j), (j, i)):
                radii[a, b, : len(r)] = r
                steps[a, b] = len(r)
        caps = np.ones((p, p, kmax), dtype=np.int64)
        if isinstance(saturation, dict):
            for (i, j), c in saturation.items():
                c = np.atleast_1d(c)
                caps[i, j, : len(c)] = c
        else:
            s = np.asarray(saturation, dtype=np.int64)
            caps[...] = s if s.ndim == 0 else s.reshape(caps.shape)
        return cls(p, family, radii, steps, caps, n_covariates, epsilon)

    def with_auto_saturation(self, counts, window_area: float, epsilon: float | None = None) -> "ModelSpec":
        """Caps from the neighbour type's abundance via :func:`saturation_auto`."""
        eps = self.epsilon if epsilon is None else epsilon
        caps = np.ones_like(self.caps)
        for i in range(self.p):
            for j in range(self.p):
                for k, area in enumerate(annulus_areas(self.ranges(i, j))):
                    caps[i, j, k] = saturation_auto(int(counts[j]), area, window_area, eps)
        return ModelSpec(self.p, self.family, self.radii, self.steps, caps,
                         self.n_covariates, eps, dict(self.meta))

    def with_covariates(self, n_covariates: int) -> "ModelSpec":
        return ModelSpec(self.p, self.family, self.radii, self.steps, self.caps,
                         n_covariates, self.epsilon, dict(self.meta))

    def annulus_index(self, ti, tj, d):
        """Annulus step of distance ``d`` for pairs ``(ti, tj)``; -1 outside."""
        r = self.radii[ti, tj]
        k = (r < np.asarray(d)[..., None]).sum(axis=-1)
        return np.where(k < self.steps[ti, tj], k, -1)


# ---------------------------------------------------------------------------
# Coefficient layout


@dataclass(frozen=True)
class Group:
    name: str
    kind: str  # "alpha", "intra" or "inter"
    i: int
    j: int
    start: int
    size: int

    @property
    def penalized(self) -> bool:
        return self.kind != "alpha"

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


class ThetaLayout:
    """Flat coefficient vector ``[alpha_1..alpha_p, beta_11..beta_pp, beta_12..]``.

    Pairs without ranges contribute no columns and no group.
    """

    def __init__(self, spec: ModelSpec):
        self.p = spec.p
        self.n_covariates = spec.n_covariates
        groups = []
        pos = 0
        for i in range(spec.p):
            groups.append(Group(f"alpha_{i + 1}", "alpha", i, i, pos, spec.n_covariates + 1))
            pos += spec.n_covariates + 1
        pairs = [(i, i) for i in range(spec.p)]
        pairs += [(i, j) for i in range(spec.p) for j in range(i + 1, spec.p)]
        self.pair_start = np.full((spec.p, spec.p), -1, dtype=np.int64)
        self.pair_group = np.full((spec.p, spec.p), -1, dtype=np.int64)
        for i, j in pairs:
            k = int(spec.steps[i, j])
            if k == 0:
                continue
            kind = "intra" if i == j else "inter"
            name = f"beta_{i + 1}" if i == j else f"beta_{i + 1}_{j + 1}"
            self.pair_start[i, j] = self.pair_start[j, i] = pos
            self.pair_group[i, j] = self.pair_group[j, i] = len(groups)
            groups.append(Group(name, kind, i, j, pos, k))
            pos += k
        self.groups: list[Group] = groups
        self.size = pos
        self.alpha_start = np.array([g.start for g in groups[: spec.p]], dtype=np.int64)
        # column -> (pair a, pair b, step)
        self.col_a = np.full(pos, -1, dtype=np.int64)
        self.col_b = np.full(pos, -1, dtype=np.int64)
        self.col_k = np.full(pos, -1, dtype=np.int64)
        for g in groups:
            if g.penalized:
                self.col_a[g.slice] = g.i
                self.col_b[g.slice] = g.j
                self.col_k[g.slice] = np.arange(g.size)

    def __len__(self) -> int:
        return self.size

    @property
    def group_of_column(self) -> np.ndarray:
        out = np.empty(self.size, dtype=np.int64)
        for gi, g in enumerate(self.groups):
            out[g.slice] = gi
        return out

    def column_names(self) -> list[str]:
        names = []
        for g in self.groups:
            if g.kind == "alpha":
                names += [f"{g.name}_0"] + [f"{g.name}_z{c + 1}" for c in range(g.size - 1)]
            else:
                names += [f"{g.name}_r{k + 1}" for k in range(g.size)]
        return names

    def index(self, group: int, member: int) -> int:
        g = self.groups[group]
        if not 0 <= member < g.size:
            raise IndexError(member)
        return g.start + member

    def locate(self, flat: int) -> tuple[int, int]:
        gi = int(self.group_of_column[flat])
        return gi, flat - self.groups[gi].start

    def penalized_groups(self) -> list[int]:
        return [gi for gi, g in enumerate(self.groups) if g.penalized]

    def theta(self, alpha=None, beta=None) -> np.ndarray:
        """Assemble a flat vector from ``alpha[i]`` and ``beta[(i, j)]`` entries."""
        th = np.zeros(self.size)
        for i, a in (alpha or {}).items():
            a = np.atleast_1d(a)
            th[self.alpha_start[i]: self.alpha_start[i] + len(a)] = a
        for (i, j), b in (beta or {}).items():
            start = self.pair_start[i, j]
            if start < 0:
                raise KeyError(f"pair {(i, j)} has no interaction terms")
            b = np.atleast_1d(b)
            th[start: start + len(b)] = b
        return th

    def beta(self, theta, i: int, j: int) -> np.ndarray:
        start = self.pair_start[i, j]
        if start < 0:
            return np.zeros(0)
        g = self.groups[self.pair_group[i, j]]
        return np.asarray(theta)[start: start + g.size]

    def alpha(self, theta, i: int) -> np.ndarray:
        return np.asarray(theta)[self.alpha_start[i]: self.alpha_start[i] + self.n_covariates + 1]


# ---------------------------------------------------------------------------
# Covariates


@dataclass(frozen=True, eq=False)
class CovariateField:
    """Raster ``values[iy, ix]`` with lower-left corner ``(x0, y0)``."""

    x0: float
    y0: float
    dx: float
    dy: float
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("raster values must be a non-empty 2-d array")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("cell sizes must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("raster values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    def cell_index(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        ix = np.clip(np.floor((xy[:, 0] - self.x0) / self.dx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor((xy[:, 1] - self.y0) / self.dy).astype(np.int64), 0, self.ny - 1)
        return iy, ix

    def value_at(self, xy) -> np.ndarray:
        """Nearest-cell lookup (the cell containing the point)."""
        iy, ix = self.cell_index(xy)
        return self.values[iy, ix]

    def covers(self, window: Window) -> bool:
        eps = 1e-9 * max(window.width, window.height)
        return (
            self.x0 <= window.x_min + eps
            and self.y0 <= window.y_min + eps
            and self.x0 + self.nx * self.dx >= window.x_max - eps
            and self.y0 + self.ny * self.dy >= window.y_max - eps
        )

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.x0 + (np.arange(self.nx) + 0.5) * self.dx,
                self.y0 + (np.arange(self.ny) + 0.5) * self.dy)

    def same_grid(self, other: "CovariateField") -> bool:
        return (self.shape == other.shape and np.allclose(
            [self.x0, self.y0, self.dx, self.dy], [other.x0, other.y0, other.dx, other.dy]))

    def with_values(self, values, name: str | None = None) -> "CovariateField":
        return CovariateField(self.x0, self.y0, self.dx, self.dy, values,
                              self.name if name is None else name)

    @classmethod
    def on_window(cls, window: Window, values, name: str = "") -> "CovariateField":
        values = np.asarray(values, dtype=float)
        ny, nx = values.shape
        return cls(window.x_min, window.y_min, window.width / nx, window.height / ny, values, name)


def covariate_matrix(covariates, xy) -> np.ndarray:
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    if not covariates:
        return np.empty((len(xy), 0))
    return np.column_stack([c.value_at(xy) for c in covariates])


def read_raster(path) -> CovariateField:
    """Read ``nx ny x0 y0 dx dy`` followed by ``nx*ny`` row-major values."""
    tokens = Path(path).read_text().split()
    if len(tokens) < 6:
        raise ValueError(f"{path}: truncated raster header")
    nx, ny = int(tokens[0]), int(tokens[1])
    x0, y0, dx, dy = (float(t) for t in tokens[2:6])
    vals = np.array([float(t) for t in tokens[6:]])
    if len(vals) != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {len(vals)}")
    return CovariateField(x0, y0, dx, dy, vals.reshape(ny, nx), Path(path).stem)


def write_raster(field_: CovariateField, path) -> None:
    lines = [f"{field_.nx} {field_.ny} {field_.x0!r} {field_.y0!r} {field_.dx!r} {field_.dy!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in field_.values]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Interaction statistics


def neighbour_counts(pattern: MultiTypePattern, spec: ModelSpec):
    """Annulus counts of every data point and the directed close pairs.

    Returns ``(counts, src, dst, d)`` where ``counts[y, j, k]`` is the number
    of type-``j`` points in annulus ``k`` (pair ``(type(y), j)``) of ``y``.
    """
    n = len(pattern)
    p, kmax = spec.p, spec.max_steps
    counts = np.zeros((n, p, kmax), dtype=np.int64)
    empty = np.empty(0, dtype=np.int64)
    if n < 2 or spec.max_range <= 0:
        return counts, empty, empty, np.empty(0)
    tree = cKDTree(pattern.xy)
    pairs = tree.query_pairs(spec.max_range * (1 + 1e-9) + 1e-12, output_type="ndarray")
    src = np.concatenate([pairs[:, 0], pairs[:, 1]]).astype(np.int64)
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]]).astype(np.int64)
    d = pairwise_distance(pattern.xy[src], pattern.xy[dst])
    tj = pattern.types[dst]
    k = spec.annulus_index(pattern.types[src], tj, d)
    ok = k >= 0
    src, dst, d, k, tj = src[ok], dst[ok], d[ok], k[ok], tj[ok]
    flat = (src * p + tj) * kmax + k
    counts = np.bincount(flat, minlength=n * p * kmax).reshape(n, p, kmax)
    return counts, src, dst, d


def interaction_statistics(query_xy, query_types, pattern: MultiTypePattern, spec: ModelSpec,
                           layout: ThetaLayout, data_index=None, cache=None) -> sparse.csr_matrix:
    """Sparse rows of ``omega`` statistics for a batch of marked locations.

    ``data_index[q]`` is the pattern index of query ``q`` when the query is a
    data point (it is then removed from the conditioning pattern), else -1.
    Only interaction columns of ``layout`` are filled.
    """
    query_xy = np.atleast_2d(np.asarray(query_xy, dtype=float)).reshape(-1, 2)
    query_types = np.asarray(query_types, dtype=np.int64).reshape(-1)
    nq = len(query_xy)
    if data_index is None:
        data_index = np.full(nq, -1, dtype=np.int64)
    data_index = np.asarray(data_index, dtype=np.int64)
    shape = (nq, layout.size)
    if nq == 0 or len(pattern) == 0 or spec.max_range <= 0:
        return sparse.csr_matrix(shape)
    if cache is None:
        cache = neighbour_counts(pattern, spec)
    counts, src, dst, dist = cache

    # directed (query, neighbour, distance) triples
    is_data = data_index >= 0
    q_parts, y_parts, d_parts = [], [], []
    if is_data.any():
        row_of = np.full(len(pattern), -1, dtype=np.int64)
        dq = np.flatnonzero(is_data)
        if len(np.unique(data_index[dq])) != len(dq):
            raise ValueError("a data point may appear only once among the queries")
        row_of[data_index[dq]] = dq
        sel = row_of[src] >= 0
        q_parts.append(row_of[src[sel]])
        y_parts.append(dst[sel])
        d_parts.append(dist[sel])
    if (~is_data).any():
        nd = np.flatnonzero(~is_data)
        qtree = cKDTree(query_xy[nd])
        ptree = cKDTree(pattern.xy)
        sdm = qtree.sparse_distance_matrix(ptree, spec.max_range * (1 + 1e-9) + 1e-12,
                                           output_type="ndarray")
        qi = nd[sdm["i"].astype(np.int64)]
        yi = sdm["j"].astype(np.int64)
        q_parts.append(qi)
        y_parts.append(yi)
        d_parts.append(pairwise_distance(query_xy[qi], pattern.xy[yi]))
    q = np.concatenate(q_parts)
    y = np.concatenate(y_parts)
    d = np.concatenate(d_parts)
    if len(q) == 0:
        return sparse.csr_matrix(shape)

    ti = query_types[q]
    tj = pattern.types[y]
    k = spec.annulus_index(ti, tj, d)
    ok = k >= 0
    q, y, ti, tj, k = q[ok], y[ok], ti[ok], tj[ok], k[ok]
    col = layout.pair_start[ti, tj] + k

    own = sparse.coo_matrix((np.ones(len(q)), (q, col)), shape=shape).tocsr()
    own.sum_duplicates()
    rows = np.repeat(np.arange(nq), np.diff(own.indptr))
    ri = query_types[rows]
    cj = np.where(layout.col_a[own.indices] == ri, layout.col_b[own.indices], layout.col_a[own.indices])
    own.data = np.minimum(own.data, spec.caps[ri, cj, layout.col_k[own.indices]])

    m = counts[y, ti, k] - is_data[q]
    hit = m < spec.caps[tj, ti, k]
    nb = sparse.coo_matrix((np.ones(int(hit.sum())), (q[hit], col[hit])), shape=shape).tocsr()
    out = (own + nb).tocsr()
    out.sum_duplicates()
    out.eliminate_zeros()
    return out


def _check_inside(xy, pattern: MultiTypePattern):
    if not pattern.window.contains(np.asarray(xy, dtype=float).reshape(1, 2))[0]:
        raise ValueError(f"location {tuple(np.ravel(xy))} lies outside the window")


def omega(u_xy, u_type: int, pattern: MultiTypePattern, spec: ModelSpec) -> np.ndarray:
    """``omega[j, k]`` for the pair ``(u_type, j)``; ``pattern`` must exclude ``u``.

    Entries beyond the step count of a pair are zero.
    """
    _check_inside(u_xy, pattern)
    layout = ThetaLayout(spec)
    row = interaction_statistics(np.reshape(u_xy, (1, 2)), [u_type], pattern, spec, layout)
    row = row.toarray()[0]
    out = np.zeros((spec.p, spec.max_steps))
    for j in range(spec.p):
        start = layout.pair_start[u_type, j]
        if start >= 0:
            kk = spec.steps[u_type, j]
            out[j, :kk] = row[start: start + kk]
    return out


def log_conditional_intensity(u_xy, u_type: int, pattern: MultiTypePattern, spec: ModelSpec,
                              theta, covariates=(), layout: ThetaLayout | None = None) -> float:
    """``z(u)' alpha_i + sum_jk beta_ijk omega_ijk(u, X)``."""
    _check_inside(u_xy, pattern)
    layout = layout or ThetaLayout(spec)
    theta = np.asarray(theta, dtype=float)
    if len(theta) != layout.size:
        raise ValueError(f"theta has length {len(theta)}, layout expects {layout.size}")
    z = np.concatenate([[1.0], covariate_matrix(covariates, np.reshape(u_xy, (1, 2)))[0]])
    val = float(z @ layout.alpha(theta, u_type))
    row = interaction_statistics(np.reshape(u_xy, (1, 2)), [u_type], pattern, spec, layout)
    return val + float((row @ theta)[0])
