from fractions import Fraction

import numpy as np
import pytest

from ddwave.dd_wavelet import eval_scaling, make_family
from ddwave.errors import InvalidArgument
from ddwave.grid3d import basis, build_grid, parse_grid_notation
from ddwave.transform import COEFFICIENTS, POINT_VALUES, CoefficientField, OffGridEvaluator, TransformPlan, multiply_operator


@pytest.fixture(scope="module")
def small():
    g = build_grid(parse_grid_notation("Z2^3 u 1/2 Z3xZ2xZ3 u 1/4 Z4^3"))
    return g, TransformPlan(g)


def zeta_dense(g):
    """Backward transform from the definition: basis function beta sampled at point alpha."""
    fam = make_family(8)
    iota, t, l = g.decomposition()
    K, J = g.integer_coords, g.point_levels
    n = g.size
    W = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            val = Fraction(1)
            for d in range(3):
                x = Fraction(int(K[a, d]), 2 ** int(J[a]))
                if t[b, d] == 0:
                    y = Fraction(2) ** int(iota[b]) * x - int(l[b, d])
                else:
                    y = Fraction(2) ** (int(iota[b]) + 1) * x - (2 * int(l[b, d]) + 1)
                val *= eval_scaling(fam, y)
                if val == 0:
                    break
            W[a, b] = float(val)
    return W


def test_backward_matches_definition(small):
    g, plan = small
    Wd = zeta_dense(g)
    assert np.abs(plan.dense("backward") - Wd).max() < 1e-13
    assert np.abs(plan.dense("forward") @ Wd - np.eye(g.size)).max() < 1e-12


def test_transposes(small):
    g, plan = small
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((2, g.size))
    assert y @ plan.backward(x) == pytest.approx(x @ plan.backward_t(y), abs=1e-10)
    assert y @ plan.forward(x) == pytest.approx(x @ plan.forward_t(y), abs=1e-10)


@pytest.mark.parametrize("number", [8, 11])
def test_round_trip(number):
    g = build_grid(basis(number))
    plan = TransformPlan(g)
    rng = np.random.default_rng(number)
    for _ in range(3):
        v = rng.standard_normal(g.size)
        assert np.abs(plan.backward(plan.forward(v)) - v).max() <= 1e-10 * np.abs(v).max()


def test_polynomial_details_vanish():
    g = build_grid(basis(11))
    plan = TransformPlan(g)
    x = g.coords
    poly = x[:, 0] ** 7 - 2 * x[:, 1] ** 5 * x[:, 2] + x[:, 2] ** 3 * x[:, 0] ** 4 + 1.0
    c = plan.forward(poly)
    fine = g.point_levels > g.jmin
    # details of points whose stencil stays inside the coarse box
    inner = np.all(np.abs(x) <= 5 - 4, axis=1) & fine
    assert np.abs(c[inner]).max() < 1e-9 * np.abs(poly).max()


def test_quadrature_single_level_gaussian():
    g = build_grid(parse_grid_notation("Z12^3"))
    q = TransformPlan(g).quadrature_weights
    x = g.coords
    assert q @ np.exp(-np.sum(x ** 2, axis=1) / 2) == pytest.approx((2 * np.pi) ** 1.5, rel=1e-7)


def test_quadrature_integrates_each_basis_function(small):
    # scaling functions integrate to their support scale, per dimension 2**-iota (t=0) or 2**-(iota+1)
    g, plan = small
    iota, t, _ = g.decomposition()
    expected = np.prod(2.0 ** -(iota[:, None] + t), axis=1)
    W = plan.dense("backward")
    assert np.allclose(plan.quadrature_weights @ W, expected, atol=1e-12)


def test_multiply_operator_by_one_is_identity(small):
    g, plan = small
    M = multiply_operator(plan, np.ones(g.size))
    c = np.random.default_rng(0).standard_normal(g.size)
    assert np.allclose(M.matvec(c), c, atol=1e-12)


def test_field_kinds(small):
    g, plan = small
    v = CoefficientField(g, np.ones(g.size), POINT_VALUES)
    assert v.kind == POINT_VALUES
    with pytest.raises(InvalidArgument):
        v.require(COEFFICIENTS)
    with pytest.raises(InvalidArgument):
        CoefficientField(g, np.ones(g.size + 1), POINT_VALUES)


def test_off_grid_evaluation():
    g = build_grid("Z10^3 u 1/2 Z6^3")
    plan = TransformPlan(g)
    x = g.coords
    poly = lambda p: p[..., 0] ** 3 - 2 * p[..., 1] * p[..., 2] + 0.5
    c = plan.forward(poly(x))
    ev = OffGridEvaluator(plan)
    idx = np.random.default_rng(0).choice(g.size, 50)
    assert np.abs(ev.evaluate(c, x[idx]) - poly(x[idx])).max() < 1e-12
    p = np.random.default_rng(2).uniform(-2, 2, (40, 3))
    # the scaling-function table is sampled at 2**-12, so off-grid values are ~1e-8 accurate
    assert np.abs(ev.evaluate(c, p) - poly(p)).max() < 1e-6
