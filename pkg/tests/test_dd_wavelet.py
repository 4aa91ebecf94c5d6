from fractions import Fraction

import numpy as np
import pytest

from ddwave.dd_wavelet import (
    build_filter_table,
    cascade_table,
    compute_a0,
    eval_scaling,
    make_family,
    second_derivative_table,
)
from ddwave.errors import InvalidArgument


# -- brute-force oracle: evaluate the defining integrals through point samples --

class _Sampler:
    """phi and phi'' on the dyadic lattice 2**-depth, evaluated by cascade."""

    def __init__(self, family, depth):
        self.depth = depth
        self.phi = cascade_table(family, depth)
        self.d2 = second_derivative_table(family, depth)
        self.family = family

    def _at(self, tab, x):
        n = x * 2 ** self.depth
        assert n.denominator == 1, "oracle depth too shallow"
        return tab[int(n)]

    def basis(self, t, j, k, x, deriv):
        # eta_{0,j,k} = phi(2^j x - k); eta_{1,j,k} = phi(2^{j+1} x - 2k - 1)
        lev, idx = (j, k) if t == 0 else (j + 1, 2 * k + 1)
        y = Fraction(2) ** lev * x - idx
        if deriv:
            return 4.0 ** lev * self._at(self.d2, y)
        return self._at(self.phi, y)

    def dual(self, t, j, k, f):
        if t == 0:
            return f(Fraction(k) / Fraction(2) ** j)
        return sum(float(g) * f(Fraction(2 * k + nu) / Fraction(2) ** (j + 1))
                   for nu, g in self.family.gtilde.items())

    def entry(self, deriv, t1, t2, j, k):
        if j >= 0:
            return self.dual(t1, 0, 0, lambda x: self.basis(t2, j, k, x, deriv))
        return self.dual(t1, -j, k, lambda x: self.basis(t2, 0, 0, x, deriv))


@pytest.mark.parametrize("order,expected", [
    (2, {1: Fraction(1, 2)}),
    (4, {1: Fraction(9, 16), 3: Fraction(-1, 16)}),
    (8, {1: Fraction(1225, 2048), 3: Fraction(-245, 2048),
         5: Fraction(49, 2048), 7: Fraction(-5, 2048)}),
])
def test_refinement_weights(order, expected):
    fam = make_family(order)
    assert fam.h[0] == 1
    for mu, w in expected.items():
        assert fam.h[mu] == w and fam.h[-mu] == w
    assert all(fam.h.get(2 * k, 0) == 0 for k in range(1, order))
    assert sum(fam.h.values()) == 2


@pytest.mark.parametrize("bad", [0, -2, 3, 7])
def test_make_family_rejects_bad_order(bad):
    with pytest.raises(InvalidArgument):
        make_family(bad)


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_subdivision_reproduces_polynomials(order):
    fam = make_family(order)
    rng = np.random.default_rng(3)
    for deg in range(order):
        coef = rng.normal(size=deg + 1)
        xs = np.arange(-20, 21)
        coarse = np.polyval(coef, xs)
        pred = [sum(float(fam.h[mu]) * coarse[i + (1 - mu) // 2]
                    for mu in range(-fam.m, fam.m + 1, 2))
                for i in range(fam.m, len(xs) - fam.m)]
        # node x_i + 1/2 from neighbours x_i + (1 - mu)/2
        exact = np.polyval(coef, xs[fam.m:len(xs) - fam.m] + 0.5)
        assert np.allclose(pred, exact, rtol=1e-12, atol=1e-9 * max(1, np.abs(exact).max()))


def test_scaling_values():
    fam = make_family(8)
    assert eval_scaling(fam, 0) == 1.0
    assert eval_scaling(fam, 3) == 0.0
    assert eval_scaling(fam, 9) == 0.0
    assert eval_scaling(fam, Fraction(1, 2)) == pytest.approx(1225 / 2048, abs=0, rel=1e-15)
    tab = cascade_table(fam, 5)
    assert tab[16] == pytest.approx(eval_scaling(fam, Fraction(1, 2)))
    assert tab[-35] == pytest.approx(eval_scaling(fam, Fraction(-35, 32)), abs=1e-15)


@pytest.mark.parametrize("order", [2, 4, 6, 8])
def test_a0_moments(order):
    a0 = compute_a0(make_family(order))
    k = np.arange(a0.lo, a0.hi + 1)
    assert np.allclose(a0.vals, a0.vals[::-1])
    assert abs(np.sum(a0.vals)) < 1e-12
    assert abs(np.sum(k * a0.vals)) < 1e-12
    assert np.sum(k ** 2 * a0.vals) == pytest.approx(2.0, abs=1e-12)
    # exact on polynomials up to degree order-1
    for p in range(4, order, 2):
        assert abs(np.sum(k ** p * a0.vals)) < 1e-9


def test_a0_order2_is_three_point_stencil():
    a0 = compute_a0(make_family(2))
    assert (a0.lo, list(a0.vals)) == (-1, [1.0, -2.0, 1.0])


@pytest.mark.parametrize("order", [6, 8])
def test_a0_is_refinement_fixed_point(order):
    fam = make_family(order)
    a0 = compute_a0(fam)
    h = fam.h_filter
    for k in range(-fam.m, fam.m + 1):
        rhs = 4 * sum(h[mu] * a0[2 * k - mu] for mu in range(-fam.m, fam.m + 1))
        assert rhs == pytest.approx(a0[k], abs=1e-12)


def test_laplacian_1d_on_quadratic_and_sine():
    fam = make_family(8)
    a0 = compute_a0(fam)
    n = np.arange(-60, 61)
    for spacing in (0.1, 0.05):
        x = n * spacing
        lap = np.convolve(x ** 2, a0.vals, mode="valid") / spacing ** 2
        assert np.max(np.abs(lap - 2.0)) < 1e-8
    errs = []
    for spacing in (0.2, 0.1):
        x = n * spacing
        lap = np.convolve(np.sin(x), a0.vals, mode="valid") / spacing ** 2
        errs.append(np.max(np.abs(lap + np.sin(x[6:-6]))))
    assert errs[1] < errs[0] / 50


@pytest.mark.parametrize("order,jspan", [(6, 3), (8, 3)])
def test_filter_table_matches_brute_force(order, jspan):
    fam = make_family(order)
    ft = build_filter_table(fam, jspan)
    oracle = _Sampler(fam, jspan + 3)
    width = 2 ** (jspan + 1) * (fam.m + 1) + 2
    for t1 in (0, 1):
        for t2 in (0, 1):
            for j in range(-jspan, jspan + 1):
                for k in range(-width, width + 1):
                    sa = oracle.entry(True, t1, t2, j, k)
                    ss = oracle.entry(False, t1, t2, j, k)
                    assert ft.a_value(t1, t2, j, k) == pytest.approx(sa, abs=1e-9 * 4 ** jspan), (t1, t2, j, k)
                    assert ft.s_value(t1, t2, j, k) == pytest.approx(ss, abs=1e-12), (t1, t2, j, k)


def test_filter_table_quoted_entries():
    fam = make_family(8)
    ft = build_filter_table(fam, 2)
    for k in range(-10, 11):
        assert ft.s_value(0, 0, -1, k) == float(fam.h.get(k, 0))
        assert ft.a_value(0, 1, -1, k) == pytest.approx(4 * ft.a0[1 - k])
        for j in range(0, 3):
            assert ft.s_value(0, 1, j, k) == 0.0
            assert ft.s_value(0, 0, j, k) == (1.0 if k == 0 else 0.0)
            assert ft.s_value(1, 1, j, k) == (1.0 if (k == 0 and j == 0) else 0.0)
    assert ft.a_value(0, 0, 0, 1000) == 0.0


def test_single_level_biorthogonality():
    fam = make_family(8)
    oracle = _Sampler(fam, 4)
    for t1 in (0, 1):
        for t2 in (0, 1):
            for k in range(-6, 7):
                got = oracle.dual(t1, 0, 0, lambda x: oracle.basis(t2, 0, k, x, False))
                assert got == pytest.approx(1.0 if (t1 == t2 and k == 0) else 0.0, abs=1e-14)


def test_csv_dump(tmp_path):
    ft = build_filter_table(make_family(4), 1)
    path = tmp_path / "filters.csv"
    ft.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "filter,t1,t2,j,k,value"
    assert len(lines) > 10
