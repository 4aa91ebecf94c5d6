import math

import numpy as np
import pytest
from scipy.special import erf

from ddwave.errors import InvalidArgument, InvalidState
from ddwave.grid3d import build_grid, parse_grid_notation
from ddwave.potentials import Nucleus, hgh_for
from ddwave.scf import (ScfConfig, ScfState, Workspace, density, hartree, hf2e_step, lda_exchange,
                        run_scf, total_energy)
from ddwave.solvers import EigenRequest, LinearSolveRequest


@pytest.fixture(scope="module")
def he_ws():
    g = build_grid(parse_grid_notation("Z8^3 u 1/2 Z6^3 u 1/4 Z5^3", scale_a=0.5))
    return Workspace(g, [Nucleus(2.0, (0, 0, 0), "hgh", hgh_for("He"))])


def test_lda_exchange_closed_form():
    v, E = lda_exchange(None, np.ones(5))
    assert v == pytest.approx(np.full(5, -(3 / math.pi) ** (1 / 3)))
    assert v[0] == pytest.approx(-0.98475, abs=1e-5)
    v8, _ = lda_exchange(None, 8 * np.ones(2))
    assert v8 == pytest.approx(2 * v[:2])
    vz, Ez = lda_exchange(None, np.zeros(3))
    assert np.all(vz == 0) and Ez == 0
    # tiny negative values from interpolation are clipped, large ones rejected
    assert lda_exchange(None, np.array([-1e-14]))[0][0] == 0
    with pytest.raises(InvalidState):
        lda_exchange(None, np.array([-1e-6]))


def test_density_integrates_to_electron_count(he_ws):
    ws = he_ws
    r2 = np.sum((ws.grid.coords * ws.grid.scale_a) ** 2, axis=1)
    c = ws.normalize(ws.plan.forward(np.exp(-r2)))
    rho = density(ws, [c], [2.0])
    assert ws.integrate(rho) == pytest.approx(2.0, rel=1e-12)
    assert np.all(rho >= 0)


def test_hartree_of_gaussian(he_ws):
    ws = he_ws
    sigma = 0.5
    pts = ws.grid.coords * ws.grid.scale_a
    r = np.linalg.norm(pts, axis=1)
    rho = np.exp(-r * r / (2 * sigma ** 2)) / (2 * math.pi * sigma ** 2) ** 1.5
    coeffs, v, res = hartree(ws, rho, LinearSolveRequest("gmres", 1e-10, 20000, 100))
    exact = np.where(r > 0, erf(r / (math.sqrt(2) * sigma)) / np.where(r > 0, r, 1), math.sqrt(2 / math.pi) / sigma)
    inner = r <= 3 * sigma
    # truncation to the box acts like a Dirichlet condition, a near-constant offset of a few percent
    err = np.abs(v[inner] - exact[inner]).max() / exact.max()
    assert err < 0.15
    offset = np.mean(exact[inner] - v[inner])
    assert np.abs(v[inner] + offset - exact[inner]).max() < 0.02 * exact.max()
    assert res.residual <= 1e-10
    with pytest.raises(InvalidArgument):
        hartree(ws, rho, LinearSolveRequest("cg"))
    z, zv, none = hartree(ws, np.zeros_like(rho))
    assert none is None and not np.any(zv)


def test_config_validation():
    with pytest.raises(InvalidArgument):
        ScfConfig(model="uhf")
    with pytest.raises(InvalidArgument):
        ScfConfig(mixing=0.0)
    with pytest.raises(InvalidArgument):
        ScfConfig(scf_tol=-1)
    assert ScfConfig(model="ks_lda_x").n_electrons == 2


def test_single_electron_energy_is_eigenvalue_plus_repulsion(he_ws):
    ws = he_ws
    st = ScfState(orbitals=[np.zeros(ws.grid.size)], occupations=[1.0], eps=[-0.4])
    assert total_energy(ws, st, "single_electron") == pytest.approx(-0.4 + ws.E_R)
    with pytest.raises(InvalidArgument):
        total_energy(ws, st, "bogus")


def test_helium_scf_small_grid(he_ws, tmp_path):
    eig = EigenRequest(nev=1, subspace_dim=20, tol=1e-9)
    cfg = ScfConfig("hf_closed_shell_2e", mixing=0.6, scf_tol=1e-7,
                    poisson=LinearSolveRequest("gmres", 1e-9, 20000, 100), eig=eig)
    trace = tmp_path / "trace.csv"
    st = run_scf(he_ws, cfg, trace_path=trace)
    assert st.converged
    assert -3.2 < st.E_total < -2.6
    assert -1.2 < st.eps[0] < -0.7
    assert trace.read_text().splitlines()[0] == "iter,eps_1,E_total,poisson_iters,arnoldi_restarts"
    assert he_ws.integrate(st.rho) == pytest.approx(2.0, rel=1e-6)
    # one more step from the converged state barely moves the energy
    E = st.E_total
    st2 = hf2e_step(he_ws, st, cfg)
    assert st2.E_total == pytest.approx(E, abs=1e-6)
    with pytest.raises(InvalidArgument):
        hf2e_step(he_ws, st, ScfConfig("ks_lda_x"))
    # exchange-only LDA binds the orbital less tightly than HF
    lda = run_scf(he_ws, ScfConfig("ks_lda_x", 0.6, 1e-7, poisson=cfg.poisson, eig=eig), initial=st)
    assert lda.converged and lda.eps[0] > st.eps[0]
