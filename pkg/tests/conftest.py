import numpy as np
import pytest

from multigibbs.model import CovariateField, ModelSpec, ThetaLayout
from multigibbs.pattern import MultiTypePattern, Window

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def random_config(rng, max_points=15, window=UNIT, family=None):
    """Random small pattern, spec (with covariates), theta and a marked point."""
    p = int(rng.integers(2, 4))
    family = family or str(rng.choice(["strauss", "saturation"]))
    ranges = {}
    for i in range(p):
        for j in range(i, p):
            k = int(rng.integers(0, 4)) if i != j else int(rng.integers(1, 4))
            ranges[(i, j)] = np.sort(rng.uniform(0.05, 0.45, k)) if k else ()
            ranges[(i, j)] = np.unique(ranges[(i, j)])
    kmax = max(1, max(len(r) for r in ranges.values()))
    caps = rng.integers(1, 4, (p, p, kmax))
    n_cov = int(rng.integers(0, 3))
    covs = [CovariateField.on_window(window, rng.normal(size=(4, 5))) for _ in range(n_cov)]
    spec = ModelSpec.build(p, ranges, family=family, saturation=caps, n_covariates=n_cov)
    layout = ThetaLayout(spec)
    theta = rng.normal(scale=0.7, size=layout.size)
    n = int(rng.integers(0, max_points + 1))
    xy = rng.uniform(0, 1, (n, 2))
    if n > 2 and rng.random() < 0.3:
        xy[1] = xy[0]  # coincident points
    types = rng.integers(0, p, n)
    pattern = MultiTypePattern(xy, types, p, window)
    u = (float(rng.uniform()), float(rng.uniform()), int(rng.integers(0, p)))
    return pattern, spec, layout, theta, covs, u


def as_points(pattern):
    return [(float(x), float(y), int(t)) for (x, y), t in zip(pattern.xy, pattern.types)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def solver_design(rng, n_mean=60):
    """Moderately sized random design with a finite unpenalised optimum."""
    from multigibbs.design import DummySpec, build_design, generate_dummies

    p = int(rng.integers(2, 4))
    ranges = {}
    for i in range(p):
        for j in range(i, p):
            k = int(rng.integers(1, 3)) if i == j else int(rng.integers(0, 3))
            ranges[(i, j)] = tuple(np.sort(rng.uniform(0.02, 0.08, k)))
    n_cov = int(rng.integers(0, 2))
    gx, gy = np.meshgrid(np.linspace(0, 1, 10), np.linspace(0, 1, 10))
    covs = [CovariateField.on_window(UNIT, np.sin(3 * gx + rng.uniform(0, 3)) + gy) for _ in range(n_cov)]
    kmax = max(len(r) for r in ranges.values())
    spec = ModelSpec.build(p, ranges, saturation=rng.integers(1, 4, (p, p, kmax)), n_covariates=n_cov)
    counts = rng.poisson(n_mean, p) + 10
    xy = rng.uniform(0, 1, (counts.sum(), 2))
    pattern = MultiTypePattern(xy, np.repeat(np.arange(p), counts), p, UNIT)
    dummies, rho = generate_dummies(UNIT, pattern.counts, DummySpec(2.0, 100), rng)
    return build_design(pattern, dummies, rho, spec, covs)
