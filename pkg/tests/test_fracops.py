import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bofpinn.fracops import (AnalyticFracOracle, BoundaryValueError, GLStencil, Grid1D, UnsupportedBasis,
                             analytic_riesz, gl_matrix, gl_weights, gl_weights_dalpha, riesz_2d_apply,
                             riesz_coeff, riesz_coeff_dalpha, shifted_gl_apply)


def test_weights_examples():
    # 1 - 2.5/3 is inexact, so the rational values hold to an ulp
    np.testing.assert_allclose(gl_weights(1.5, 4), [1, -1.5, 0.375, 0.0625, 0.0234375], rtol=1e-15)
    np.testing.assert_array_equal(gl_weights(2.0, 4), [1, -2, 1, 0, 0])
    np.testing.assert_array_equal(gl_weights(1.0, 3), [1, -1, 0, 0])


def test_weights_domain():
    for bad in (0.0, -0.5, 2.1):
        with pytest.raises(ValueError):
            gl_weights(bad, 3)


@given(st.floats(1.01, 1.99), st.integers(1, 60))
def test_weights_recurrence(alpha, K):
    w = gl_weights(alpha, K)
    assert w[0] == 1.0
    for k in range(1, K + 1):
        assert w[k] == (1.0 - (alpha + 1.0) / k) * w[k - 1]


def test_weight_sum_tends_to_zero():
    w = gl_weights(1.5, 10 ** 4)
    s = np.cumsum(w)
    assert abs(s[-1]) <= 1e-2
    d = np.diff(s[2:])
    assert np.all(d >= 0) or np.all(d <= 0)


def test_weights_dalpha_fd():
    h = 1e-6
    fd = (gl_weights(1.4 + h, 12) - gl_weights(1.4 - h, 12)) / (2 * h)
    np.testing.assert_allclose(gl_weights_dalpha(1.4, 12), fd, rtol=1e-6, atol=1e-10)
    assert riesz_coeff_dalpha(1.4) == pytest.approx((riesz_coeff(1.4 + h) - riesz_coeff(1.4 - h)) / (2 * h),
                                                     rel=1e-7)


def test_riesz_coeff():
    assert riesz_coeff(2.0) == pytest.approx(0.5, abs=1e-15)
    assert riesz_coeff(1.5) == pytest.approx(0.7071067811865476, rel=1e-15)
    assert riesz_coeff(1.2) == pytest.approx(1.6180339887498947, rel=1e-12)
    with pytest.raises(ValueError):
        riesz_coeff(1.0)


@given(st.floats(1.001, 1.999))
def test_riesz_coeff_positive(alpha):
    assert riesz_coeff(alpha) > 0


def test_grid():
    g = Grid1D(-1.0, 1.0, 8)
    assert g.dx == 0.25 and g.n_nodes == 9
    assert np.all(np.diff(g.nodes) > 0)
    np.testing.assert_allclose(np.diff(g.nodes), 0.25, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        Grid1D(0.0, 1.0, 1)


def test_stencil_blend():
    g = Grid1D(0, 1, 4)
    assert GLStencil(g, 1.5, 2).blend == (0.75, 0.25)
    assert GLStencil(g, 1.5, 1).blend == (1.0, 0.0)


@pytest.mark.parametrize("order", [1, 2])
def test_alpha2_is_laplacian(order):
    # sign convention check: alpha = 2 must give the classical second difference
    g = Grid1D(0.0, 1.0, 16)
    x = g.nodes
    out = shifted_gl_apply(x * (1 - x), g, 2.0, order)
    np.testing.assert_allclose(out, -2.0, rtol=0, atol=1e-10)


def test_zero_field_and_boundary_rows():
    g = Grid1D(0, 1, 10)
    assert np.all(shifted_gl_apply(np.zeros(11), g, 1.5) == 0)
    M = gl_matrix(g, 1.5)
    assert np.all(M[0] == 0) and np.all(M[-1] == 0)


def test_rejects_boundary_values():
    g = Grid1D(0, 1, 10)
    f = np.zeros(11)
    f[0] = 1e-6
    with pytest.raises(BoundaryValueError):
        shifted_gl_apply(f, g, 1.5)
    with pytest.raises(ValueError):
        shifted_gl_apply(np.zeros(10), g, 1.5)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_linearity(a, b, seed):
    g = Grid1D(0, 1, 20)
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=(2, 21))
    f[[0, -1]] = 0
    h[[0, -1]] = 0
    lhs = shifted_gl_apply(a * f + b * h, g, 1.6)
    rhs = a * shifted_gl_apply(f, g, 1.6) + b * shifted_gl_apply(h, g, 1.6)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * max(1, np.abs(lhs).max()))


def _bump_err(N, alpha, order):
    g = Grid1D(0, 1, N)
    x = g.nodes
    o = AnalyticFracOracle("bump", alpha)
    return np.max(np.abs(shifted_gl_apply(o.function(x), g, alpha, order) - analytic_riesz(o, x[1:-1])))


@pytest.mark.xfail(strict=True, reason="boundary layer: the zero extension of x^3 is only C^2, so the "
                   "error at x_1 decays like h^1.2 and dominates the max norm from N=256 on")
def test_bump_ratio_128_256():
    r = _bump_err(128, 1.5, 2) / _bump_err(256, 1.5, 2)
    assert 3.2 <= r <= 4.8


def test_bump_interior_rms_ratio():
    def rms(N):
        g = Grid1D(0, 1, N)
        o = AnalyticFracOracle("bump", 1.5)
        e = shifted_gl_apply(o.function(g.nodes), g, 1.5) - analytic_riesz(o, g.nodes[1:-1])
        return np.sqrt(np.mean(e ** 2))

    assert 3.2 <= rms(128) / rms(256) <= 4.8


def _riesz_poly6(x, a):
    # x^6 (1-x)^6 = sum_j C(6,j) (-1)^j x^(6+j); zero extension is C^5
    out = np.zeros_like(x)
    for y in (x, 1 - x):
        for j in range(7):
            n = 6 + j
            out += math.comb(6, j) * (-1) ** j * math.gamma(n + 1) / math.gamma(n + 1 - a) * y ** (n - a)
    return riesz_coeff(a) * out


def _poly6_err(N, alpha, order):
    g = Grid1D(0, 1, N)
    x = g.nodes
    return np.max(np.abs(shifted_gl_apply(x ** 6 * (1 - x) ** 6, g, alpha, order) - _riesz_poly6(x[1:-1], alpha)))


def test_poly6_oracle_matches_bump_oracle_form():
    # same Gamma-series machinery, checked against a fine grid
    g = Grid1D(0, 1, 4096)
    x = g.nodes
    num = shifted_gl_apply(x ** 6 * (1 - x) ** 6, g, 1.5)[1023]
    assert abs(num - _riesz_poly6(np.array([x[1024]]), 1.5)[0]) < 1e-7


def test_convergence_rates():
    Ns = [64, 128, 256, 512]
    e2 = [_poly6_err(N, 1.5, 2) for N in Ns]
    e1 = [_poly6_err(N, 1.5, 1) for N in Ns]
    s2 = -np.polyfit(np.log(Ns), np.log(e2), 1)[0]
    s1 = -np.polyfit(np.log(Ns), np.log(e1), 1)[0]
    assert abs(s2 - 2.0) <= 0.2
    assert abs(s1 - 1.0) <= 0.2


def test_sine_oracle_vs_grid():
    g = Grid1D(0, 1, 4096)
    o = AnalyticFracOracle("sine", 1.5, k=1)
    num = shifted_gl_apply(o.function(g.nodes), g, 1.5)[2047]
    assert abs(num - analytic_riesz(o, np.array([0.5]))[0]) <= 1e-4


def test_bump_oracle_symmetry_and_limit():
    o = AnalyticFracOracle("bump", 1.3)
    x = np.linspace(0.05, 0.95, 19)
    np.testing.assert_allclose(analytic_riesz(o, x), analytic_riesz(o, 1 - x), rtol=0, atol=1e-12)
    o2 = AnalyticFracOracle("bump", 1.999)
    x = 0.5
    # u'' of x^3 (1-x)^3 at 1/2; the Riesz derivative tends to +u''
    upp = 6 * x * (1 - x) ** 3 - 18 * x ** 2 * (1 - x) ** 2 + 6 * x ** 3 * (1 - x)
    val = analytic_riesz(o2, np.array([x]))[0]
    assert abs(val - upp) <= 0.01 * abs(upp)


def test_oracle_errors():
    with pytest.raises(UnsupportedBasis):
        AnalyticFracOracle("sine", 1.5, k=3)
    with pytest.raises(UnsupportedBasis):
        AnalyticFracOracle("cosine", 1.5)
    with pytest.raises(ValueError):
        AnalyticFracOracle("bump", 1.5, M=5)
    with pytest.raises(ValueError):
        analytic_riesz(AnalyticFracOracle("bump", 1.5), np.array([0.0]))


def test_2d_separable_and_symmetric():
    g1, g2 = Grid1D(0, 1, 20), Grid1D(0, 1, 24)
    x1, x2 = g1.nodes, g2.nodes
    gx, hy = np.sin(np.pi * x1), x2 ** 2 * (1 - x2)
    gx[[0, -1]] = 0
    f = np.outer(gx, hy)
    out = riesz_2d_apply(f, g1, g2, 1.4, 1.7)
    ref = np.outer(shifted_gl_apply(gx, g1, 1.4), hy[1:-1]) + np.outer(gx[1:-1], shifted_gl_apply(hy, g2, 1.7))
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-13 * max(1, np.abs(ref).max()))
    g = Grid1D(0, 1, 16)
    s = np.outer(g.nodes * (1 - g.nodes), g.nodes * (1 - g.nodes)) + 0.0
    s[3, 5] = s[5, 3] = 0.7
    o = riesz_2d_apply(s, g, g, 1.5, 1.5)
    np.testing.assert_allclose(o, o.T, rtol=0, atol=1e-12)
    assert np.all(riesz_2d_apply(np.zeros((17, 17)), g, g, 1.5, 1.5) == 0)
