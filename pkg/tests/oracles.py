"""Brute-force reference computations used as independent test oracles.

Everything here loops over points in plain Python and evaluates the Gibbs
density through its potential sums, without touching the vectorised code
paths of the package.
"""

import math

import numpy as np

from multigibbs.model import STRAUSS


def dist(a, b):
    return math.hypot(a[0] - b[0], a[1] - b[1])


def in_step(d, ranges, k):
    lo = 0.0 if k == 0 else ranges[k - 1]
    if k == 0:
        return d <= ranges[0]
    return lo < d <= ranges[k]


def annulus_count(center, others, ranges, k):
    return sum(1 for y in others if in_step(dist(center, y), ranges, k))


def g_value(spec, i, j, k, center, others):
    ne = annulus_count(center, others, spec.ranges(i, j), k)
    if spec.family == STRAUSS:
        return ne
    return min(int(spec.caps[i, j, k]), ne)


def sufficient_statistics(points, spec, layout, covariates=()):
    """``v(x)`` for a list of ``(x, y, type)`` tuples.

    Inter-type groups collect ``s_ij + s_ji`` because the density sums the
    potentials over all ordered pairs with ``beta_ij == beta_ji``.
    """
    v = np.zeros(layout.size)
    by_type = {i: [(idx, (pt[0], pt[1])) for idx, pt in enumerate(points) if pt[2] == i]
               for i in range(spec.p)}
    for idx, (x, y, i) in enumerate(points):
        a = layout.alpha_start[i]
        v[a] += 1.0
        for c, cov in enumerate(covariates):
            v[a + 1 + c] += float(cov.value_at(np.array([[x, y]]))[0])
        for j in range(spec.p):
            start = layout.pair_start[i, j]
            if start < 0:
                continue
            others = [q for jdx, q in by_type[j] if jdx != idx]
            for k in range(int(spec.steps[i, j])):
                v[start + k] += g_value(spec, i, j, k, (x, y), others)
    return v


def log_density(points, spec, layout, theta, covariates=()):
    return float(np.dot(theta, sufficient_statistics(points, spec, layout, covariates)))


def brute_log_lambda(u, points, spec, layout, theta, covariates=()):
    """log f(x + u) - log f(x) by direct potential sums."""
    return (log_density(list(points) + [u], spec, layout, theta, covariates)
            - log_density(points, spec, layout, theta, covariates))


def brute_row(u, points, spec, layout, covariates=()):
    return (sufficient_statistics(list(points) + [u], spec, layout, covariates)
            - sufficient_statistics(points, spec, layout, covariates))


def poisson_cdf_direct(k, a):
    if k < 0:
        return 0.0
    term = math.exp(-a)
    total = term
    for m in range(1, k + 1):
        term *= a / m
        total += term
    return total


def poisson_quantile_direct(a, level):
    c = 0
    while poisson_cdf_direct(c, a) < level:
        c += 1
    return c


def translation_k_direct(xi, xj, r, window, same):
    """Double-sum translation-corrected K estimate."""
    w, h = window.width, window.height
    area = w * h
    total = 0.0
    for a, x in enumerate(xi):
        for b, y in enumerate(xj):
            if same and a == b:
                continue
            dx, dy = x[0] - y[0], x[1] - y[1]
            if math.hypot(dx, dy) <= r:
                total += area / ((w - abs(dx)) * (h - abs(dy)))
    ni, nj = len(xi), len(xj)
    norm = ni * (ni - 1) if same else ni * nj
    return area * total / norm
