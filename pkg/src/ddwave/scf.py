"""Densities, Hartree potentials, exchange, total energies and the SCF loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dd_wavelet import build_filter_table, make_family
from .errors import ConvergenceError, InvalidArgument, InvalidState
from .grid3d import MultiGrid
from .operators import FusedHamiltonian, HghNonlocalOp, LaplacianOp
from .potentials import Nucleus, PseudoCutoff, nuclear_potential_values, repulsion_energy
from .solvers import EigenRequest, LinearSolveRequest, arnoldi_smallest, solve_linear
from .transform import TransformPlan

log = logging.getLogger(__name__)

MODELS = ("single_electron", "hf_closed_shell_2e", "ks_lda_x")
RHO_CLIP = 1e-12


@dataclass(frozen=True)
class ScfConfig:
    model: str = "single_electron"
    mixing: float = 0.5
    scf_tol: float = 1e-7
    max_scf: int = 60
    poisson: LinearSolveRequest = LinearSolveRequest()
    # loosen early Poisson solves to 1% of the last energy change (never above 1e-4)
    adaptive_poisson: bool = True
    eig: EigenRequest = EigenRequest()

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidArgument(f"unknown model {self.model!r}; choose from {MODELS}")
        if not 0 < self.mixing <= 1:
            raise InvalidArgument("mixing must lie in (0, 1]")
        if not self.scf_tol > 0:
            raise InvalidArgument("scf_tol must be positive")

    @property
    def n_electrons(self) -> int:
        return 1 if self.model == "single_electron" else 2


@dataclass
class IterationRecord:
    iteration: int
    eps: float
    E_total: float
    poisson_iters: int
    arnoldi_restarts: int
    seconds: float


@dataclass
class ScfState:
    """Occupied orbital coefficients and the derived density and potentials.

    ``rho`` and ``v_h`` are point values; ``v_h_coeffs`` keeps the Poisson
    solution for warm starts.
    """

    orbitals: List[np.ndarray]
    occupations: List[float]
    eps: List[float]
    rho: Optional[np.ndarray] = None
    v_h: Optional[np.ndarray] = None
    v_h_coeffs: Optional[np.ndarray] = None
    v_x: Optional[np.ndarray] = None
    E_x: float = 0.0
    E_total: float = float("nan")
    converged: bool = False
    history: List[IterationRecord] = field(default_factory=list)


class Workspace:
    """Everything that depends only on the grid and the nuclei."""

    def __init__(self, grid: MultiGrid, nuclei: Sequence[Nucleus], order: int = 8,
                 cut: Optional[PseudoCutoff] = None):
        self.grid = grid
        self.nuclei = list(nuclei)
        family = make_family(order)
        span = grid.jmax - grid.jmin + 1
        self.filters = build_filter_table(family, span)
        self.plan = TransformPlan(grid, order, self.filters)
        self.lap = LaplacianOp(grid, self.filters)
        self.cut = cut if cut is not None else PseudoCutoff.for_grid(grid)
        self.v_nuc = nuclear_potential_values(self.nuclei, grid, cut=self.cut)
        self.nonlocal_op = HghNonlocalOp(self.plan, self.nuclei)
        self.h0 = FusedHamiltonian(self.lap, self.plan, self.v_nuc, self.nonlocal_op)
        self.E_R = repulsion_energy(self.nuclei)
        self.q = self.plan.quadrature_weights

    # -- helpers on point values

    def integrate(self, values: np.ndarray) -> float:
        return float(self.q @ values)

    def values(self, c: np.ndarray) -> np.ndarray:
        return self.plan.backward(c)

    def normalize(self, c: np.ndarray) -> np.ndarray:
        v = self.values(c)
        nrm = self.integrate(v * v)
        if not nrm > 0:
            raise InvalidState("orbital has non-positive norm")
        return c / math.sqrt(nrm)

    def hamiltonian(self, d_extra: Optional[np.ndarray] = None) -> FusedHamiltonian:
        return self.h0 if d_extra is None else self.h0.with_potential(self.v_nuc + d_extra)

    def laplacian_map(self):
        return self.lap.as_map(1.0, "L")


def density(ws: Workspace, orbitals: Sequence[np.ndarray], occupations: Sequence[float]) -> np.ndarray:
    """Point values ``sum_i n_i |phi_i|^2``."""
    rho = np.zeros(ws.grid.size)
    for c, n in zip(orbitals, occupations):
        v = ws.values(c)
        rho += n * v * v
    return rho


def hartree(ws: Workspace, rho: np.ndarray, req: LinearSolveRequest = LinearSolveRequest(),
            x0: Optional[np.ndarray] = None, log_path=None, log_append=False):
    """Solve ``nabla^2 V_H = -4 pi rho`` in the truncated basis.

    ``rho`` holds point values. Returns ``(coefficients, point values, SolveResult)``.
    """
    if not np.all(np.isfinite(rho)):
        raise InvalidArgument("density is not finite")
    rho_c = ws.plan.forward(rho)
    rhs = -4.0 * math.pi * ws.grid.scale_a ** 2 * rho_c
    if not np.any(rhs):
        z = np.zeros(ws.grid.size)
        return z, z.copy(), None
    if req.method == "cg" and len(ws.grid.blocks) > 1:
        raise InvalidArgument("cg needs a symmetric operator; use a single-level grid or gmres/cgnr")
    res = solve_linear(ws.laplacian_map(), rhs, req, x0=x0, log_path=log_path, log_append=log_append)
    return res.x, ws.values(res.x), res


def lda_exchange(ws: Optional[Workspace], rho: np.ndarray):
    """Exchange-only LDA: ``(v_x point values, E_x)``; ``E_x`` needs a workspace for the integral."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < -RHO_CLIP):
        raise InvalidState(f"negative density {rho.min():.3e} below the clip threshold")
    r = np.clip(rho, 0.0, None)
    v_x = -np.cbrt(3.0 * r / math.pi)
    E_x = 0.0
    if ws is not None:
        E_x = -0.75 * (3.0 / math.pi) ** (1.0 / 3.0) * ws.integrate(r ** (4.0 / 3.0))
    return v_x, E_x


def total_energy(ws: Workspace, state: ScfState, model: str) -> float:
    if model == "single_electron":
        return state.eps[0] + ws.E_R
    rho, v_h = state.rho, state.v_h
    if model == "hf_closed_shell_2e":
        return 2.0 * state.eps[0] - 0.25 * ws.integrate(rho * v_h) + ws.E_R
    if model == "ks_lda_x":
        return (2.0 * state.eps[0] - 0.5 * ws.integrate(rho * v_h) + state.E_x
                - ws.integrate(rho * state.v_x) + ws.E_R)
    raise InvalidArgument(f"unknown model {model!r}")


def _effective_potential(ws: Workspace, state: ScfState, model: str) -> Optional[np.ndarray]:
    if model == "single_electron":
        return None
    if model == "hf_closed_shell_2e":
        return 0.5 * state.v_h
    return state.v_h + state.v_x


def _eigensolve(ws, H, req, v0):
    res = arnoldi_smallest(H.as_map(), req, v0=v0)
    return res


def _poisson_request(state: ScfState, cfg: ScfConfig) -> LinearSolveRequest:
    req = cfg.poisson
    if not cfg.adaptive_poisson:
        return req
    if len(state.history) < 2:
        return replace(req, tol=max(req.tol, 1e-4))
    dE = abs(state.history[-1].E_total - state.history[-2].E_total)
    return replace(req, tol=max(req.tol, min(1e-4, 1e-2 * dE)))


def _update_potentials(ws: Workspace, state: ScfState, cfg: ScfConfig, poisson_log=None) -> int:
    req = _poisson_request(state, cfg)
    coeffs, v_h, res = hartree(ws, state.rho, req, x0=state.v_h_coeffs, log_path=poisson_log,
                               log_append=True)
    state.v_h_coeffs, state.v_h = coeffs, v_h
    if cfg.model == "ks_lda_x":
        state.v_x, state.E_x = lda_exchange(ws, state.rho)
    return 0 if res is None else res.iterations


def hf2e_step(ws: Workspace, state: ScfState, cfg: ScfConfig) -> ScfState:
    """One closed-shell two-electron iteration with the half Hartree term."""
    if cfg.model != "hf_closed_shell_2e":
        raise InvalidArgument("hf2e_step needs the hf_closed_shell_2e model")
    return _scf_step(ws, state, cfg)[0]


def _scf_step(ws: Workspace, state: ScfState, cfg: ScfConfig, poisson_log=None):
    t0 = time.perf_counter()
    npoisson = _update_potentials(ws, state, cfg, poisson_log)
    H = ws.hamiltonian(_effective_potential(ws, state, cfg.model))
    res = _eigensolve(ws, H, replace(cfg.eig, nev=1), state.orbitals[0])
    c = ws.normalize(res.vectors[:, 0])
    if state.orbitals and float(c @ state.orbitals[0]) < 0:
        c = -c
    state.eps = [float(res.values[0])]
    state.E_total = total_energy(ws, state, cfg.model)
    rho_new = density(ws, [c], [2.0])
    state.rho = (1.0 - cfg.mixing) * state.rho + cfg.mixing * rho_new
    state.orbitals = [c]
    rec = IterationRecord(len(state.history) + 1, state.eps[0], state.E_total, npoisson,
                          res.restarts, time.perf_counter() - t0)
    state.history.append(rec)
    return state, rec


def run_scf(ws: Workspace, cfg: ScfConfig, trace_path=None, poisson_log=None,
            initial=None) -> ScfState:
    """Iterate to self-consistency (a single eigensolve for the one-electron model).

    ``initial`` may be a coefficient vector (eigensolver start) or a previous
    :class:`ScfState` on the same grid, whose orbital, density and Hartree
    solution then seed this run. ``poisson_log`` collects every Poisson solve.
    """
    t0 = time.perf_counter()
    if poisson_log is not None:
        Path(poisson_log).unlink(missing_ok=True)
    prev_state = initial if isinstance(initial, ScfState) else None
    v0 = prev_state.orbitals[0] if prev_state is not None else initial
    if prev_state is not None and cfg.model != "single_electron" and prev_state.rho is not None:
        c = prev_state.orbitals[0]
        state = ScfState(orbitals=[c], occupations=[float(cfg.n_electrons)], eps=list(prev_state.eps),
                         rho=prev_state.rho.copy(), v_h_coeffs=prev_state.v_h_coeffs)
    else:
        res = arnoldi_smallest(ws.h0.as_map(), replace(cfg.eig, nev=1), v0=v0)
        c = ws.normalize(res.vectors[:, 0])
        state = ScfState(orbitals=[c], occupations=[float(cfg.n_electrons)], eps=[float(res.values[0])])
        if cfg.model == "single_electron":
            state.E_total = total_energy(ws, state, cfg.model)
            state.converged = True
            state.history.append(IterationRecord(1, state.eps[0], state.E_total, 0, res.restarts,
                                                 time.perf_counter() - t0))
            _write_trace(trace_path, state.history)
            return state
        state.rho = density(ws, [c], [2.0])
    prev = None
    for it in range(cfg.max_scf):
        state, rec = _scf_step(ws, state, cfg, poisson_log)
        log.info("scf %d: eps=%.8f E=%.8f poisson=%d restarts=%d (%.1fs)", rec.iteration, rec.eps,
                 rec.E_total, rec.poisson_iters, rec.arnoldi_restarts, rec.seconds)
        if prev is not None and abs(rec.E_total - prev) < cfg.scf_tol:
            state.converged = True
            break
        prev = rec.E_total
    _write_trace(trace_path, state.history)
    if not state.converged:
        raise ConvergenceError(f"SCF did not converge in {cfg.max_scf} iterations",
                               [r.E_total for r in state.history])
    return state


def _write_trace(path, history: Sequence[IterationRecord]) -> None:
    if path is None:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "eps_1", "E_total", "poisson_iters", "arnoldi_restarts"])
        for r in history:
            w.writerow([r.iteration, repr(r.eps), repr(r.E_total), r.poisson_iters, r.arnoldi_restarts])
