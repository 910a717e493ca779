import math

import numpy as np
import pytest

from multigibbs.mctest import (
    RANK,
    STUDENTISED,
    CurveSet,
    cross_k,
    interaction_test_matrix,
    kernel_intensity,
    l_transform,
    rank_envelope_test,
    studentised_deviation_test,
)
from multigibbs.pattern import MultiTypePattern, Window
from multigibbs.simulate import ThomasSpec, sim_poisson, sim_thomas, substream

from oracles import translation_k_direct

BOX = Window(0, 100, 0, 60)


def _mass(field):
    return field.values.sum() * field.dx * field.dy


def test_interior_point_has_unit_mass():
    f = kernel_intensity([[50.0, 30.0]], BOX, 10.0, 1.0)
    assert _mass(f) == pytest.approx(1.0, abs=0.01)
    raw = kernel_intensity([[50.0, 30.0]], BOX, 10.0, 1.0, edge=False)
    assert _mass(raw) == pytest.approx(1.0, abs=0.01)


def test_corner_point_mass_corrected():
    raw = kernel_intensity([[0.5, 0.5]], BOX, 10.0, 1.0, edge=False)
    cor = kernel_intensity([[0.5, 0.5]], BOX, 10.0, 1.0)
    assert _mass(raw) < 0.5
    assert _mass(cor) == pytest.approx(1.0, abs=0.02)


def test_kernel_support_and_sign():
    pts = np.array([[20.0, 20.0], [70.0, 45.0]])
    f = kernel_intensity(pts, BOX, 8.0, 2.0)
    assert np.all(f.values >= 0)
    cx, cy = np.meshgrid(f.x0 + (np.arange(f.nx) + 0.5) * f.dx, f.y0 + (np.arange(f.ny) + 0.5) * f.dy)
    dmin = np.min([np.hypot(cx - x, cy - y) for x, y in pts], axis=0)
    assert np.all(f.values[dmin > 8.0] == 0)
    assert _mass(f) == pytest.approx(2.0, rel=1e-9)


def test_empty_pattern_gives_zero_field():
    f = kernel_intensity(np.empty((0, 2)), BOX, 8.0, 2.0)
    assert np.all(f.values == 0)


def test_k_zero_below_separation():
    w = Window(0, 10, 0, 10)
    xy = np.array([[2.0, 2.0], [5.0, 6.0]])
    assert np.all(cross_k(xy[:1], xy[1:], w, [1.0, 4.9]) == 0)
    assert cross_k(xy, None, w, [4.99], same=True)[0] == 0


def test_k_matches_direct_double_sum():
    w = Window(0, 10, 0, 8)
    xy = np.array([[1.0, 1.0], [2.5, 1.5], [2.0, 3.0]])
    other = np.array([[1.5, 2.0], [2.0, 3.0], [6.0, 6.0]])
    for r in (0.8, 1.6, 2.5, 3.9):
        assert cross_k(xy, None, w, [r], same=True)[0] == pytest.approx(translation_k_direct(xy, xy, r, w, True))
        assert cross_k(xy, other, w, [r])[0] == pytest.approx(translation_k_direct(xy, other, r, w, False))


def test_k_unbiased_under_csr():
    w = Window(0, 10, 0, 10)
    r = np.array([0.5, 1.0])
    uni, cross = [], []
    for seed in range(500):
        rng = substream(seed, "csr-k")
        a = sim_poisson(w, rng, n=100)
        b = sim_poisson(w, rng, n=80)
        uni.append(cross_k(a, None, w, r, same=True))
        cross.append(cross_k(a, b, w, r))
    for ks in (uni, cross):
        assert np.allclose(np.mean(ks, axis=0), np.pi * r * r, rtol=0.02)


def test_k_monotone_and_range_limit():
    w = Window(0, 10, 0, 10)
    xy = sim_poisson(w, np.random.default_rng(0), n=60)
    k = cross_k(xy, None, w, np.linspace(0.1, 4.5, 40), same=True)
    assert np.all(np.diff(k) >= 0) and np.all(np.diff(l_transform(k)) >= 0)
    with pytest.raises(ValueError):
        cross_k(xy, None, w, [5.0], same=True)
    with pytest.raises(ValueError):
        cross_k(np.empty((0, 2)), xy, w, [1.0])


def _walks(rng, n, m=25):
    return np.cumsum(rng.normal(size=(n, m)), axis=1)


def test_studentised_trivial_cases():
    rng = np.random.default_rng(1)
    null = _walks(rng, 19)
    r = np.arange(25.0)
    assert studentised_deviation_test(CurveSet(r, null.mean(axis=0), null)) == 1.0
    assert studentised_deviation_test(CurveSet(r, null.mean(axis=0) + 100, null)) == pytest.approx(1 / 20)


def test_studentised_drops_flat_ranges(caplog):
    null = np.ones((5, 3))
    null[:, 1] = np.arange(5.0)
    data = np.array([1.0, 10.0, 1.0])
    assert studentised_deviation_test(CurveSet(np.arange(3.0), data, null)) == pytest.approx(1 / 6)
    assert "zero null spread" in caplog.text


def test_rank_trivial_cases():
    rng = np.random.default_rng(2)
    null = _walks(rng, 99)
    r = np.arange(25.0)
    lo, hi = rank_envelope_test(CurveSet(r, null.max(axis=0) + 1, null))
    assert hi == pytest.approx(1 / 100) and lo == hi
    lo, hi = rank_envelope_test(CurveSet(r, null[3].copy(), null))
    assert lo < hi
    assert (lo * 100) == pytest.approx(round(lo * 100)) and (hi * 100) == pytest.approx(round(hi * 100))


@pytest.mark.parametrize("which", ["studentised", "rank"])
def test_null_calibration(which):
    rng = np.random.default_rng(3 if which == "studentised" else 4)
    s, reps = 199, 1000
    rejections = 0
    r = np.arange(20.0)
    for _ in range(reps):
        curves = _walks(rng, s + 1, 20)
        cs = CurveSet(r, curves[0], curves[1:])
        p = studentised_deviation_test(cs) if which == "studentised" else rank_envelope_test(cs)[1]
        rejections += p <= 0.05
    rate = rejections / reps
    if which == "studentised":
        assert abs(rate - 0.05) <= 0.02
    else:
        assert rate <= 0.07


def test_independent_poisson_types_rarely_flagged():
    w = Window(0, 1, 0, 1)
    r = np.linspace(0.01, 0.1, 10)
    flagged, total = 0, 0
    for seed in range(6):
        rng = substream(seed, "indep")
        xy = np.vstack([sim_poisson(w, rng, n=80) for _ in range(3)])
        pat = MultiTypePattern(xy, np.repeat([0, 1, 2], 80), 3, w)
        res = interaction_test_matrix(pat, r, s=99, bandwidth=0.3, cell=0.02, seed=seed)
        off = ~np.eye(3, dtype=bool)
        flagged += res.indicators[off].sum()
        total += off.sum()
        assert np.allclose(res.pvalues * 100, np.round(res.pvalues * 100))
    assert flagged / total <= 0.15


def test_clustered_type_flagged_against_itself():
    w = Window(0, 1, 0, 1)
    r = np.linspace(0.01, 0.1, 10)
    hits = 0
    for seed in range(20):
        rng = substream(seed, "thomas-self")
        a = sim_thomas(w, ThomasSpec(mu=10, sigma=0.02, kappa=10), rng)
        b = sim_poisson(w, rng, n=60)
        pat = MultiTypePattern(np.vstack([a, b]), np.repeat([0, 1], [len(a), 60]), 2, w)
        res = interaction_test_matrix(pat, r, s=39, bandwidth=0.3, cell=0.02, test=RANK, seed=seed)
        hits += res.indicators[0, 0]
    assert hits >= 19
