import numpy as np
import pytest

from ddwave.dd_wavelet import build_filter_table, make_family
from ddwave.errors import InvalidArgument, InvalidState, UnsupportedFeature
from ddwave.grid3d import build_grid, parse_grid_notation
from ddwave.operators import (FusedHamiltonian, HghNonlocalOp, LaplacianOp, hamiltonian, kinetic,
                              local_potential)
from ddwave.potentials import HghChannel, HghParams, Nucleus, hgh_for, hgh_projector, real_harmonics
from ddwave.transform import TransformPlan, multiply_operator

from oracles import dense_laplacian


@pytest.fixture(scope="module")
def two_level():
    g = build_grid(parse_grid_notation("Z5^3 u 1/2 Z4xZ5xZ3"))
    plan = TransformPlan(g)
    return g, plan, LaplacianOp(g, plan.filters)


def test_matrix_free_matches_dense_assembly(two_level):
    g, plan, lap = two_level
    Ld = dense_laplacian(g, plan.filters)
    Lm = lap.dense()
    assert np.abs(Ld - Lm).max() <= 1e-12 * np.abs(Ld).max()
    assert np.abs(Lm - Lm.T).max() > 1e-3


def test_single_level_symmetric():
    g = build_grid("Z4^3")
    plan = TransformPlan(g)
    L = LaplacianOp(g, plan.filters).dense()
    assert np.abs(L - L.T).max() < 1e-13


def test_transpose(two_level):
    g, plan, lap = two_level
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, g.size))
    assert y @ lap.apply(x) == pytest.approx(x @ lap.apply_t(y), abs=1e-9)


@pytest.mark.parametrize("text", ["Z20^3", "Z20^3 u 1/2 Z12^3", "1/2 Z30^3 u 1/4 Z20^3 u 1/8 Z12^3"])
def test_polynomial_laplacian(text):
    g = build_grid(parse_grid_notation(text))
    plan = TransformPlan(g)
    lap = LaplacianOp(g, plan.filters)
    x = g.coords
    c = plan.forward(np.sum(x ** 2, axis=1) + x[:, 0] ** 3 * x[:, 1])
    v = plan.backward(lap.apply(c))
    inner = np.all(np.abs(x) <= 3.0, axis=1)
    assert np.abs(v[inner] - 6 - 6 * x[inner, 0] * x[inner, 1]).max() < 1e-8


def test_filter_span_checked():
    g = build_grid("Z3^3 u 1/2 Z3^3 u 1/4 Z3^3")
    small = build_filter_table(make_family(8), 0)
    with pytest.raises(InvalidState):
        LaplacianOp(g, small)


def test_kinetic_scaling():
    g = build_grid(parse_grid_notation("Z3^3", scale_a=0.5))
    plan = TransformPlan(g)
    lap = LaplacianOp(g, plan.filters)
    c = np.random.default_rng(0).standard_normal(g.size)
    assert np.allclose(kinetic(lap).matvec(c), -0.5 / 0.25 * lap.apply(c))


def test_local_potentials_are_linear():
    g = build_grid("Z3^3 u 1/2 Z2^3")
    plan = TransformPlan(g)
    pot = lambda p: -1.0 / (1.0 + np.sum(p ** 2, axis=1))
    A = local_potential(plan, pot)
    B = local_potential(plan, lambda p: 2 * pot(p))
    c = np.random.default_rng(0).standard_normal(g.size)
    assert np.allclose(A.matvec(c) + A.matvec(c), B.matvec(c))
    H = hamiltonian(A, [A])
    assert np.allclose(H.matvec(c), B.matvec(c))


def test_potential_must_be_finite():
    g = build_grid("Z2^3")
    plan = TransformPlan(g)
    with pytest.raises(InvalidArgument, match="not finite"):
        local_potential(plan, lambda p: -1.0 / np.linalg.norm(p, axis=1))


def test_nonlocal_is_symmetric_and_rejects_d_channels():
    g = build_grid(parse_grid_notation("Z6^3 u 1/2 Z6^3", scale_a=0.5))
    plan = TransformPlan(g)
    li = Nucleus(3.0, (0.0, 0.0, 0.1), "hgh", hgh_for("Li"))
    op = HghNonlocalOp(plan, [li])
    rng = np.random.default_rng(2)
    f, h = rng.standard_normal((2, g.size))
    assert op.inner(f, h) == pytest.approx(op.inner(h, f), rel=1e-10)
    d = HghParams("X", 1.0, 0.5, (0.0, 0.0, 0.0, 0.0), (HghChannel(2, 0.5, np.eye(3) * 0.1),))
    with pytest.raises(UnsupportedFeature):
        HghNonlocalOp(plan, [Nucleus(1.0, (0, 0, 0), "hgh", d)])


def test_fused_hamiltonian_matches_sum():
    g = build_grid(parse_grid_notation("Z5^3 u 1/2 Z4^3", scale_a=0.5))
    plan = TransformPlan(g)
    lap = LaplacianOp(g, plan.filters)
    nuc = Nucleus(3.0, (0.0, 0.0, 0.0), "hgh", hgh_for("Li"))
    d = -1.0 / (1.0 + np.sum((g.coords * 0.5) ** 2, axis=1))
    nl = HghNonlocalOp(plan, [nuc])
    H = FusedHamiltonian(lap, plan, d, nl)
    ref = hamiltonian(kinetic(lap), [multiply_operator(plan, d)], [nl.as_map()])
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, g.size))
    assert np.allclose(H.apply(x), ref.matvec(x), atol=1e-10)
    assert y @ H.apply(x) == pytest.approx(x @ H.apply_t(y), rel=1e-10)


def test_projector_norm_by_quadrature():
    # r_l resolved by four points per radius
    r_l = 0.2
    g = build_grid(parse_grid_notation("Z24^3", scale_a=r_l / 4))
    q = TransformPlan(g).quadrature_weights
    pts = g.coords * g.scale_a
    r = np.linalg.norm(pts, axis=1)
    for l, i in ((0, 1), (1, 1)):
        f = hgh_projector(l, i, r_l, r) * real_harmonics(l, pts)[-1]
        assert q @ (f * f) == pytest.approx(1.0, abs=1e-6)
