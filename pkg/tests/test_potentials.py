import math

import numpy as np
import pytest
from scipy.integrate import quad

from ddwave.errors import InvalidArgument, MissingParameter, ParseError
from ddwave.potentials import (Nucleus, PseudoCutoff, format_hgh_parameters, hgh_for, hgh_local,
                               hgh_projector, load_hgh_parameters, parse_hgh_text, real_harmonics,
                               repulsion_energy, v_cut, v_interp)


def test_interp_hits_nodes_and_matches_coulomb_outside():
    cut = PseudoCutoff(0.25, 7)
    r = np.array([0.25, 0.3, 1.0, 7.5])
    assert np.allclose(v_interp(cut, r), -1.0 / r)
    assert math.isfinite(v_interp(cut, 0.0))
    # continuity at the cutoff, from inside
    assert v_interp(cut, 0.25 - 1e-9) == pytest.approx(-4.0, abs=1e-6)
    # even extension: no kink at the origin
    eps = 1e-5
    assert v_interp(cut, eps) - v_interp(cut, 0.0) == pytest.approx(0.0, abs=1e-6)


def test_interp_degree_one_is_plateau():
    cut = PseudoCutoff(0.5, 1)
    assert np.allclose(v_interp(cut, np.linspace(0, 0.49, 7)), -2.0)


def test_v_cut():
    assert v_cut(0.5, 0.1) == -2.0
    assert v_cut(0.5, 2.0) == -0.5
    with pytest.raises(InvalidArgument):
        v_cut(0.0, 1.0)


@pytest.mark.parametrize("c, D", [(0.0, 7), (0.1, 4), (0.1, 0)])
def test_cutoff_validation(c, D):
    with pytest.raises(InvalidArgument):
        PseudoCutoff(c, D)


def test_hgh_local_hydrogen():
    p = hgh_for("H")
    # at the origin the erf term tends to -Z/r_loc sqrt(2/pi); the Gaussian adds C1
    assert hgh_local(p, 0.0) == pytest.approx(-math.sqrt(2 / math.pi) / 0.2 + p.C[0], rel=1e-12)
    assert hgh_local(p, 1e-9) == pytest.approx(hgh_local(p, 0.0), rel=1e-10)
    assert hgh_local(p, 10.0) == pytest.approx(-0.1, rel=1e-12)
    # at r = r_loc every polynomial term collapses to the sum of C_i
    expect = -math.erf(1 / math.sqrt(2)) / 0.2 + math.exp(-0.5) * (p.C[0] + p.C[1])
    assert hgh_local(p, 0.2) == pytest.approx(expect, rel=1e-12)


def test_hgh_local_coulomb_part_at_origin():
    from ddwave.potentials import HghParams
    p = HghParams("X", 1.0, 0.2)
    assert hgh_local(p, 0.0) == pytest.approx(-5 * math.sqrt(2 / math.pi), rel=1e-12)
    assert hgh_local(p, 0.0) == pytest.approx(-3.98942, abs=1e-5)


@pytest.mark.parametrize("l, i", [(0, 1), (0, 2), (1, 1), (1, 3)])
def test_projectors_normalised(l, i):
    val, _ = quad(lambda r: hgh_projector(l, i, 0.7, r) ** 2 * r * r, 0, 30)
    assert val == pytest.approx(1.0, rel=1e-10)


def test_real_harmonics_orthonormal():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((200000, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    Y = real_harmonics(1, u)
    gram = 4 * np.pi * Y @ Y.T / len(u)
    assert np.allclose(gram, np.eye(3), atol=2e-2)
    assert real_harmonics(0, u[:2]) == pytest.approx(np.full((1, 2), 0.5 / math.sqrt(math.pi)))


def test_repulsion():
    h = hgh_for("H")
    pair = [Nucleus(1.0, (0, 0, -0.6989975), "hgh", h), Nucleus(1.0, (0, 0, 0.6989975), "hgh", h)]
    assert repulsion_energy(pair) == pytest.approx(0.715310, abs=1e-6)
    li = Nucleus(3.0, (0, 0, 0), "hgh", hgh_for("Li"))
    assert li.charge == 1.0
    with pytest.raises(InvalidArgument):
        repulsion_energy([li, li])


def test_bare_at_nucleus_rejected():
    n = Nucleus(1.0, (0, 0, 0), "bare")
    with pytest.raises(InvalidArgument):
        n.potential(np.array([0.0, 1.0]))
    assert n.potential(np.array([2.0])) == pytest.approx([-0.5])


def test_cut_uses_half_cutoff():
    n = Nucleus(1.0, (0, 0, 0), "cut")
    assert n.potential(0.0, PseudoCutoff(0.5)) == pytest.approx(-4.0)
    with pytest.raises(InvalidArgument):
        n.potential(0.0)


def test_parameter_file_round_trip():
    params = load_hgh_parameters()
    assert set(params) >= {"H", "He", "Li"}
    assert params["He"].Z_ion == 2 and params["H"].r_loc == 0.2
    assert len(params["Li"].channels) == 2
    assert parse_hgh_text(format_hgh_parameters(params)) == params


def test_parse_errors():
    with pytest.raises(ParseError, match="symmetric"):
        parse_hgh_text("element X 1 0.5\nchannel 0 0.4 1 2 0 3 0 0 0 0 1\n")
    with pytest.raises(ParseError):
        parse_hgh_text("channel 0 0.4 1 0 0 0 0 0\n")
    with pytest.raises(ParseError):
        parse_hgh_text("element X one 0.5\n")
    with pytest.raises(MissingParameter):
        hgh_for("Xx")
