"""Walk kernel against brute-force path enumeration and exact binomials."""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from polytube import walk_kernel as wk
from polytube.errors import ConfigError, ResourceBudgetError


def enumerate_pmf(d, n):
    """Exact p_n(x) by enumerating all (2d)^n paths, as a dense layer array."""
    out = np.zeros((2 * n + 1,) * d, dtype=np.float64)
    weight = Fraction(1, (2 * d) ** n)
    acc = {}
    for moves in itertools.product(range(2 * d), repeat=n):
        pos = [0] * d
        for mv in moves:
            pos[mv // 2] += 1 if mv % 2 == 0 else -1
        acc[tuple(pos)] = acc.get(tuple(pos), Fraction(0)) + weight
    for pos, p in acc.items():
        out[tuple(np.array(pos) + n)] = float(p)
    return out


# Frozen values, verified by the enumeration oracle in test_enumeration_agrees:
# d=1: p_2(0) = 1/2; d=2: p_2((0,0)) = 1/4; d=3: p_2((0,0,0)) = 1/6.
FROZEN_RETURNS = {1: 0.5, 2: 0.25, 3: 1.0 / 6.0}


@pytest.mark.parametrize("d", [1, 2, 3])
def test_enumeration_agrees_with_kernel(d):
    n_max = {1: 8, 2: 6, 3: 4}[d]
    kern = wk.build_kernel(d, n_max)
    for n in range(n_max + 1):
        np.testing.assert_allclose(kern.layer(n), enumerate_pmf(d, n),
                                   rtol=0, atol=1e-15)
    assert kern.probability(2, np.zeros(d, dtype=int)) == pytest.approx(
        FROZEN_RETURNS[d], abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.integers(0, 12))
def test_layers_conserve_probability(d, n):
    kern = wk.build_kernel(d, n)
    assert np.isclose(kern.layer(n).sum(), 1.0, rtol=1e-13, atol=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.integers(1, 10))
def test_layer_symmetry_and_parity(d, n):
    layer = wk.build_kernel(d, n).layer(n)
    for axis in range(d):
        np.testing.assert_array_equal(layer, np.flip(layer, axis=axis))
    if d == 2:
        np.testing.assert_array_equal(layer, layer.T)
    # sites with coordinate sum of the wrong parity are exact zeros
    idx = np.indices(layer.shape).sum(axis=0) - d * n
    assert np.all(layer[(idx + n) % 2 == 1] == 0.0)


def test_chapman_kolmogorov_d1():
    kern = wk.build_kernel(1, 24)
    for n, m in [(3, 5), (10, 14), (7, 7)]:
        conv = np.convolve(kern.layer(n), kern.layer(m))
        np.testing.assert_allclose(conv, kern.layer(n + m), rtol=0, atol=1e-14)


def test_chapman_kolmogorov_d2():
    kern = wk.build_kernel(2, 10)
    n, m = 4, 6
    a, b = kern.layer(n), kern.layer(m)
    conv = np.zeros((2 * (n + m) + 1,) * 2)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            if a[i, j]:
                conv[i:i + b.shape[0], j:j + b.shape[1]] += a[i, j] * b
    np.testing.assert_allclose(conv, kern.layer(n + m), rtol=0, atol=1e-14)


def test_iter_layers_matches_table():
    kern = wk.build_kernel(2, 12)
    for n, layer in wk.iter_layers(2, 12):
        np.testing.assert_array_equal(layer, kern.layer(n))


def test_central_return_curve_exact_fractions():
    r = wk.central_return_curve(30)
    for m in range(31):
        exact = Fraction(math.comb(2 * m, m), 4**m)
        assert r[m] == pytest.approx(float(exact), rel=1e-14)


def test_pmf_window_matches_kernel():
    kern = wk.build_kernel(1, 41)
    for n in (0, 1, 2, 13, 40, 41):
        w = wk.pmf_window_1d(n, 41)
        np.testing.assert_allclose(w, np.pad(kern.layer(n), 41 - n),
                                   rtol=1e-13, atol=1e-300)


def test_pmf_window_narrow_and_log_form():
    w = wk.pmf_window_1d(2001, 5)
    xs = np.arange(-5, 6)
    via_log = np.exp(wk.log_pmf_1d(2001, xs))
    np.testing.assert_allclose(w, via_log, rtol=1e-10, atol=1e-300)
    assert w[5 + 0] == 0.0 and w[5 + 1] > 0.0  # odd layer parity


@pytest.mark.parametrize("d", [1, 2, 3])
def test_return_curve_matches_kernel(d):
    n_max = {1: 12, 2: 8, 3: 5}[d]
    kern = wk.build_kernel(d, 2 * n_max)
    q = wk.return_probability_curve(d, n_max)
    table = [kern.return_probability(2 * n) for n in range(n_max + 1)]
    np.testing.assert_allclose(q, table, rtol=1e-12, atol=0)


def test_return_curve_collision_identity():
    # sum_x p_n(x)^2 = p_{2n}(0): square-summed layers against the curve
    for d, n in [(1, 9), (2, 6), (3, 4)]:
        kern = wk.build_kernel(d, n)
        q = wk.return_probability_curve(d, n)
        assert np.sum(kern.layer(n) ** 2) == pytest.approx(q[n], rel=1e-13)


def test_local_limit_rate_d1():
    # max_x |p_n(x) - 2 g_n(x)| should fall off like 1/n (it is in fact
    # O(n^{-3/2}) for the centred walk, comfortably inside the bound).
    errs = {}
    for n in (256, 1024, 4096):
        w = wk.pmf_window_1d(n, n)
        xs = np.arange(-n, n + 1, dtype=np.float64)
        g = norm.pdf(xs, scale=np.sqrt(n))
        live = (xs + n) % 2 == 0
        errs[n] = np.max(np.abs(w[live] - 2 * g[live]))
        assert errs[n] <= 1.0 / n
    assert errs[4096] < errs[1024] < errs[256]


def test_gaussian_kernel_matches_norm_pdf():
    for t, x in [(1.0, 0.0), (4.0, 1.5), (100.0, -12.0)]:
        assert wk.gaussian_kernel(t, x) == pytest.approx(
            norm.pdf(x, scale=np.sqrt(t)), rel=1e-13)
    # d=2: product of per-coordinate densities with variance t/2
    val = wk.gaussian_kernel(8.0, (1.0, -2.0), d=2)
    ref = norm.pdf(1.0, scale=2.0) * norm.pdf(-2.0, scale=2.0)
    assert val == pytest.approx(ref, rel=1e-13)


def test_sample_path_steps_and_determinism():
    p1 = wk.sample_path(2, 50, seed=11)
    p2 = wk.sample_path(2, 50, seed=11)
    np.testing.assert_array_equal(p1, p2)
    assert p1.shape == (51, 2)
    steps = np.diff(p1, axis=0)
    assert np.all(np.abs(steps).sum(axis=1) == 1)
    assert not np.array_equal(p1, wk.sample_path(2, 50, seed=12))


def test_sample_path_endpoint_variance():
    n, m = 16, 4000
    ends = np.array([wk.sample_path(1, n, seed=s)[-1, 0] for s in range(m)])
    # Var = n, standard error of the sample variance ~ n sqrt(2/m)
    assert abs(ends.var() - n) < 4 * n * np.sqrt(2.0 / m)
    assert abs(ends.mean()) < 4 * np.sqrt(n / m)


def test_budget_and_validation_errors():
    with pytest.raises(ResourceBudgetError):
        wk.build_kernel(3, 300)
    with pytest.raises(ConfigError):
        wk.build_kernel(4, 5)
    with pytest.raises(ConfigError):
        wk.build_kernel(1, -1)
    with pytest.raises(ConfigError):
        wk.gaussian_kernel(0.0, 1.0)
