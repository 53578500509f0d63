import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import map_coordinates

from diffreg.counters import tally
from diffreg.interp import Interpolator, evaluate, interpolate, prefilter
from diffreg.spectral import Grid, band_limited_noise

seeds = st.integers(0, 2**31 - 1)


def random_points(rng, shape):
    return rng.uniform(-3 * np.pi, 3 * np.pi, (2,) + shape)


@given(seeds)
def test_matches_independent_periodic_spline(seed):
    # scipy's grid-wrap mode is an independent periodic cubic B-spline
    rng = np.random.default_rng(seed)
    g = Grid((16, 24))
    u = rng.standard_normal(g.n)
    p = random_points(rng, (50,))
    idx = np.stack([(p[i] + np.pi) / g.h[i] for i in (0, 1)])
    oracle = map_coordinates(u, idx, order=3, mode="grid-wrap")
    assert np.allclose(interpolate(u, p), oracle, atol=1e-12)


@given(seeds)
def test_reproduces_nodes(seed):
    g = Grid((16, 16))
    u = np.random.default_rng(seed).standard_normal(g.n)
    assert np.abs(interpolate(u, g.coords()) - u).max() <= 1e-10 * np.abs(u).max()


@given(seeds)
def test_constants_are_reproduced_anywhere(seed):
    rng = np.random.default_rng(seed)
    g = Grid((8, 8))
    assert np.allclose(interpolate(np.full(g.n, 2.5), random_points(rng, (30,))), 2.5)


@given(seeds)
def test_periodic_wrap(seed):
    rng = np.random.default_rng(seed)
    g = Grid((16, 16))
    u = rng.standard_normal(g.n)
    p = random_points(rng, (20,))
    shift = np.array([2 * np.pi, -4 * np.pi])[:, None]
    assert np.allclose(interpolate(u, p), interpolate(u, p + shift), atol=1e-12)


@given(seeds)
def test_overshoot_bound_for_smooth_fields(seed):
    rng = np.random.default_rng(seed)
    g = Grid((32, 32))
    u = band_limited_noise(g, rng)
    vals = interpolate(u, random_points(rng, (400,)))
    assert np.abs(vals).max() <= 1.2 * np.abs(u).max()


def test_fourth_order_accuracy():
    errs = []
    for n in (32, 64):
        g = Grid((n, n))
        x1, x2 = g.coords()
        p = g.coords() + 0.37 * np.array(g.h)[:, None, None]
        u = np.sin(x1) * np.cos(2 * x2)
        errs.append(np.abs(interpolate(u, p) - np.sin(p[0]) * np.cos(2 * p[1])).max())
    assert np.log2(errs[0] / errs[1]) > 3.7


def test_gradient_of_spline_matches_finite_difference(rng):
    g = Grid((16, 16))
    u = rng.standard_normal(g.n)
    p = random_points(rng, (10,))
    c = prefilter(u)
    e = 1e-6
    grad = Interpolator(g, p).gradient(c, prefiltered=True)
    for i in (0, 1):
        d = np.zeros((2, 1))
        d[i] = e
        fd = (evaluate(c, p + d) - evaluate(c, p - d)) / (2 * e)
        assert np.allclose(grad[i], fd, atol=1e-6)


def test_adjoint_is_transpose(rng):
    g = Grid((16, 16))
    I = Interpolator(g, random_points(rng, g.n))
    u = rng.standard_normal(g.n)
    y = rng.standard_normal(g.n)
    assert np.isclose(np.sum(I(u) * y), np.sum(u * I.adjoint(y)), rtol=1e-12)


def test_vector_fields_and_counter(rng):
    g = Grid((8, 8))
    v = rng.standard_normal((2,) + g.n)
    I = Interpolator(g, random_points(rng, (5,)))
    with tally() as t:
        out = I(v)
    assert t["interp"] == 2
    assert out.shape == (2, 5)
    assert np.allclose(out[1], I(v[1]))


def test_prefilter_inverts_spline_sampling(rng):
    g = Grid((12, 12))
    c = rng.standard_normal(g.n)
    samples = evaluate(c, g.coords())
    assert np.allclose(prefilter(samples), c, atol=1e-12)


def test_non_finite_points_are_rejected():
    g = Grid((8, 8))
    with pytest.raises(ValueError):
        Interpolator(g, np.full((2, 3), np.inf))
