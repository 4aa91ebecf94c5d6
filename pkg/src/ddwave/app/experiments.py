"""Runs built from the core modules: single points, bond scans, excited states, radial profiles."""
from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from ..errors import BracketError, InvalidArgument
from ..grid3d import MultiGrid, build_grid, symmetrize_for_atom
from ..potentials import PseudoCutoff
from ..scf import ScfConfig, ScfState, Workspace, hartree, run_scf
from ..solvers import EigenRequest, smallest_eigenpairs
from ..transform import OffGridEvaluator
from .systems import SystemDef, atom_system, make_system

log = logging.getLogger(__name__)

PSEUDO_LABELS = {"cut": "const", "interp": "interp", "hgh": "HGH", "bare": "none"}


@contextmanager
def stage(name: str):
    """Tag any exception escaping the block with ``exc.stage = name``."""
    try:
        yield
    except Exception as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


@dataclass
class RunReport:
    system: str
    grid_label: str
    g: float
    pseudo: str
    model: str
    d: Optional[float]
    n_points: int
    E_total: float
    eps: List[float]
    scf_iterations: int
    poisson_iterations: int
    arnoldi_restarts: int
    timings: Dict[str, float]
    references: Dict[str, float] = field(default_factory=dict)
    state: Optional[ScfState] = field(default=None, repr=False)
    workspace: Optional[Workspace] = field(default=None, repr=False)

    @property
    def deltas(self) -> Dict[str, float]:
        out = {}
        if "E" in self.references:
            out["E"] = self.E_total - self.references["E"]
        if "eps" in self.references and self.eps:
            out["eps"] = self.eps[0] - self.references["eps"]
        return out


def workspace_for(defn: SystemDef, grid: Optional[MultiGrid] = None, degree: int = 7) -> Workspace:
    grid = build_grid(defn.grid) if grid is None else grid
    return Workspace(grid, defn.nuclei, cut=PseudoCutoff.for_grid(grid, degree))


def run_system(defn: SystemDef, cfg: ScfConfig, grid_label: str = "", initial=None,
               trace_path=None, poisson_log=None, grid: Optional[MultiGrid] = None,
               degree: int = 7) -> RunReport:
    """Set up and solve one system at fixed geometry."""
    if cfg.model != defn.model:
        cfg = replace(cfg, model=defn.model)
    times = {}
    t0 = time.perf_counter()
    with stage("grid"):
        if grid is None:
            grid = build_grid(defn.grid)
    with stage("setup"):
        ws = workspace_for(defn, grid, degree)
    times["setup"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    with stage("scf"):
        state = run_scf(ws, cfg, trace_path=trace_path, poisson_log=poisson_log, initial=initial)
    times["scf"] = time.perf_counter() - t1
    times["total"] = time.perf_counter() - t0
    hist = state.history
    return RunReport(
        system=defn.name,
        grid_label=grid_label,
        g=grid.spec.finest_spacing,
        pseudo=PSEUDO_LABELS[defn.pseudo],
        model=defn.model,
        d=defn.d,
        n_points=grid.size,
        E_total=state.E_total,
        eps=list(state.eps),
        scf_iterations=len(hist),
        poisson_iterations=sum(r.poisson_iters for r in hist),
        arnoldi_restarts=sum(r.arnoldi_restarts for r in hist),
        timings=times,
        references=dict(defn.references),
        state=state,
        workspace=ws,
    )


# ---------------------------------------------------------------- bond scans

@dataclass
class BondScanResult:
    samples: List[Tuple[float, float]]
    fit: Tuple[float, float, float]        # alpha, beta, gamma of E = alpha d^2 + beta d + gamma
    d_min: float
    E_min: float
    E_atoms: float
    E_binding: float
    atom_energies: Dict[str, float] = field(default_factory=dict)
    reports: List[RunReport] = field(default_factory=list, repr=False)


def fit_parabola(samples: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """Exact quadratic through three ``(d, E)`` points."""
    if len(samples) != 3:
        raise InvalidArgument("the parabola fit needs exactly three samples")
    d = np.array([s[0] for s in samples], dtype=float)
    E = np.array([s[1] for s in samples], dtype=float)
    if len(set(d.tolist())) != 3:
        raise InvalidArgument("bond lengths must be distinct")
    alpha, beta, gamma = np.linalg.solve(np.vander(d, 3), E)
    return float(alpha), float(beta), float(gamma)


def parabola_minimum(samples: Sequence[Tuple[float, float]]) -> Tuple[Tuple[float, float, float], float]:
    alpha, beta, gamma = fit_parabola(samples)
    if not alpha > 0:
        raise BracketError(f"fitted curvature {alpha:.3e} is not positive; choose bond lengths around the minimum")
    d_min = -beta / (2.0 * alpha)
    ds = [s[0] for s in samples]
    if not min(ds) <= d_min <= max(ds):
        raise BracketError(f"parabola minimum d = {d_min:.4f} lies outside [{min(ds)}, {max(ds)}]; re-bracket")
    return (alpha, beta, gamma), d_min


def atom_energies(defn: SystemDef, cfg: ScfConfig, params_path=None, degree: int = 7) -> Dict[str, float]:
    """Energies of the reference atoms on the symmetrized grid, one run per distinct element."""
    spec = symmetrize_for_atom(defn.grid)
    grid = None
    out: Dict[str, float] = {}
    for el in dict.fromkeys(defn.atoms):
        atom = atom_system(el, spec, defn.pseudo, params_path)
        if grid is None:
            grid = build_grid(spec)
        rep = run_system(atom, replace(cfg, model="single_electron"), grid=grid, degree=degree)
        out[el] = rep.E_total
    return out


def bond_scan(defn: SystemDef, d_values: Sequence[float], cfg: ScfConfig, params_path=None,
              degree: int = 7, grid_label: str = "", with_atoms: bool = True) -> BondScanResult:
    """Three energies, a parabola through them, and a fresh run at its minimum.

    The grid is built once and shared by all geometries; each run starts from
    the previous converged state.
    """
    if len(d_values) != 3:
        raise InvalidArgument("a bond scan takes exactly three bond lengths")
    grid = build_grid(defn.grid)
    reports: List[RunReport] = []
    prev = None
    for d in sorted(d_values):
        sysd = make_system(defn.name, defn.grid, defn.pseudo, d, defn.model, defn.n_electrons,
                           params_path, defn.references)
        rep = run_system(sysd, cfg, grid_label, initial=prev, grid=grid, degree=degree)
        log.info("scan %s d=%.6f E=%.8f", defn.name, d, rep.E_total)
        reports.append(rep)
        prev = rep.state
    samples = [(r.d, r.E_total) for r in reports]
    with stage("fit"):
        if not samples[1][1] < min(samples[0][1], samples[2][1]):
            raise BracketError(f"the middle bond length is not the lowest energy {samples}; re-bracket")
        fit, d_min = parabola_minimum(samples)
    best = min(reports, key=lambda r: abs(r.d - d_min))
    sysd = make_system(defn.name, defn.grid, defn.pseudo, d_min, defn.model, defn.n_electrons,
                       params_path, defn.references)
    rep = run_system(sysd, cfg, grid_label, initial=best.state, grid=grid, degree=degree)
    reports.append(rep)
    energies = atom_energies(defn, cfg, params_path, degree) if with_atoms else {}
    E_atoms = sum(energies[el] for el in defn.atoms) if with_atoms else float("nan")
    return BondScanResult(samples, fit, d_min, rep.E_total, E_atoms, E_atoms - rep.E_total,
                          energies, reports)


# ---------------------------------------------------------------- hydrogen excited states

def hydrogen_orbitals(points: np.ndarray, center=(0.0, 0.0, 0.0)) -> Dict[str, np.ndarray]:
    """Analytic hydrogen 1s, 2s and real 2p orbitals (atomic units) at ``points`` (Bohr)."""
    rel = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    r = np.linalg.norm(rel, axis=1)
    n2 = 1.0 / (4.0 * math.sqrt(2.0 * math.pi))
    return {
        "1s": np.exp(-r) / math.sqrt(math.pi),
        "2s": n2 * (2.0 - r) * np.exp(-r / 2.0),
        "2px": n2 * rel[:, 0] * np.exp(-r / 2.0),
        "2py": n2 * rel[:, 1] * np.exp(-r / 2.0),
        "2pz": n2 * rel[:, 2] * np.exp(-r / 2.0),
    }


@dataclass
class LabeledState:
    label: str
    energy: float
    weights: Dict[str, float]     # squared overlap with each analytic shell (2p: summed over the triplet)
    quality: float                # sqrt(1 - ||P f||^2) for the projector P onto the labelled shell
    coefficients: np.ndarray = field(repr=False)


@dataclass
class ExcitedStates:
    states: List[LabeledState]
    overlaps: np.ndarray          # pairwise <f_i | f_j> of the normalized computed states
    residuals: np.ndarray

    @property
    def max_offdiag_overlap(self) -> float:
        o = np.abs(self.overlaps - np.diag(np.diag(self.overlaps)))
        return float(o.max()) if o.size else 0.0

    def by_label(self, prefix: str) -> List[LabeledState]:
        return [s for s in self.states if s.label.startswith(prefix)]


def _shell_weights(ws: Workspace, v: np.ndarray, analytic: Dict[str, np.ndarray]) -> Dict[str, float]:
    w = {k: ws.integrate(v * a) for k, a in analytic.items()}
    return {"1s": w["1s"] ** 2, "2s": w["2s"] ** 2, "2p": w["2px"] ** 2 + w["2py"] ** 2 + w["2pz"] ** 2}


def orthonormalize_degenerate(ws: Workspace, C: np.ndarray, values: np.ndarray,
                              tol: float = 1e-6) -> np.ndarray:
    """Loewdin-orthonormalise columns of ``C`` whose eigenvalues agree within ``tol``.

    Any basis of a degenerate eigenspace is a set of eigenvectors; the
    symmetric choice keeps each vector as close as possible to the input.
    """
    C = C.copy()
    order = np.argsort(values)
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and values[order[stop]] - values[order[stop - 1]] <= tol * max(1.0, abs(values[order[stop]])):
            stop += 1
        idx = order[start:stop]
        if len(idx) > 1:
            V = np.column_stack([ws.values(C[:, i]) for i in idx])
            S = V.T @ (ws.q[:, None] * V)
            w, U = np.linalg.eigh(S)
            C[:, idx] = C[:, idx] @ (U @ np.diag(w ** -0.5) @ U.T)
        start = stop
    return C


def excited_states(defn: SystemDef, eig: EigenRequest, degree: int = 7,
                   ws: Optional[Workspace] = None, degeneracy_tol: float = 1e-6) -> ExcitedStates:
    """Lowest ``eig.nev`` states of a one-electron atom, labelled by analytic overlaps.

    Labels depend only on squared overlaps, so eigenvector signs do not matter.
    2p states are named ``2p_a``, ``2p_b``, ``2p_c`` in order of energy.
    """
    if defn.model != "single_electron" or len(defn.nuclei) != 1:
        raise InvalidArgument("excited states need a one-electron atom")
    if eig.nev < 5:
        raise InvalidArgument("need at least five states to cover the n = 2 shell")
    ws = workspace_for(defn, degree=degree) if ws is None else ws
    with stage("eigensolve"):
        res = smallest_eigenpairs(ws.h0.as_map(), eig)
    pts = ws.grid.coords * ws.grid.scale_a
    analytic = hydrogen_orbitals(pts, defn.nuclei[0].R)
    # normalise the sampled analytic functions with the same quadrature
    analytic = {k: a / math.sqrt(ws.integrate(a * a)) for k, a in analytic.items()}
    C = np.column_stack([ws.normalize(res.vectors[:, i]) for i in range(len(res.values))])
    C = orthonormalize_degenerate(ws, C, res.values, degeneracy_tol)
    coeffs = [C[:, i] for i in range(C.shape[1])]
    vals = [ws.values(c) for c in coeffs]
    n = len(vals)
    overlaps = np.array([[ws.integrate(vals[i] * vals[k]) for k in range(n)] for i in range(n)])
    states = []
    p_count = 0
    for i in range(n):
        w = _shell_weights(ws, vals[i], analytic)
        shell = max(w, key=w.get)
        if w[shell] < 0.5:
            label = f"state{i + 1}"
        elif shell == "2p":
            label = "2p_" + "abcdefgh"[p_count]
            p_count += 1
        else:
            label = shell
        quality = math.sqrt(max(0.0, 1.0 - w[shell]))
        states.append(LabeledState(label, float(res.values[i]), w, quality, coeffs[i]))
    op = ws.h0.as_map()
    residuals = np.array([np.linalg.norm(op.matvec(c) - s.energy * c) / max(np.linalg.norm(op.matvec(c)), 1e-300)
                          for c, s in zip(coeffs, states)])
    return ExcitedStates(states, overlaps, residuals)


# ---------------------------------------------------------------- radial averages

def sphere_rule(n_theta: int = 16, n_phi: int = 32) -> Tuple[np.ndarray, np.ndarray]:
    """Unit vectors and weights (summing to 1) of a Gauss-Legendre x uniform product rule."""
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - x ** 2)
    dirs = np.stack([np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(),
                     np.repeat(x, n_phi)], axis=1)
    w = np.repeat(wx, n_phi) / (2.0 * n_phi)
    return dirs, w


def radial_average(ws: Workspace, c: np.ndarray, center, r_samples: Sequence[float],
                   n_theta: int = 16, n_phi: int = 32,
                   evaluator: Optional[OffGridEvaluator] = None) -> List[Tuple[float, float, float]]:
    """``(r, fbar, gbar)`` with ``fbar`` the spherical mean and ``gbar = 2 sqrt(pi) fbar``.

    ``gbar`` is the radial function of an s state, whose angular part is
    ``1 / (2 sqrt(pi))``.
    """
    g = ws.grid
    a = g.scale_a
    ev = OffGridEvaluator(ws.plan) if evaluator is None else evaluator
    dirs, w = sphere_rule(n_theta, n_phi)
    center = np.asarray(center, dtype=float)
    outer = min(b.hi.min() * 2.0 ** -b.j for b in g.blocks) * a
    out = []
    for r in r_samples:
        if r > outer:
            log.warning("radius %.3f B reaches past the grid box (%.3f B); values are truncated", r, outer)
        pts = (center + r * dirs) / a
        f = ev.evaluate(c, pts)
        fbar = float(w @ f)
        out.append((float(r), fbar, 2.0 * math.sqrt(math.pi) * fbar))
    return out


# ---------------------------------------------------------------- Poisson benchmark

def gaussian_density(ws: Workspace, sigma: float, charge: float = 1.0):
    """Point values of a normalized Gaussian charge at the origin and its exact potential."""
    r = np.linalg.norm(ws.grid.coords * ws.grid.scale_a, axis=1)
    rho = charge * np.exp(-r ** 2 / (2.0 * sigma ** 2)) / (2.0 * math.pi * sigma ** 2) ** 1.5
    safe = np.where(r > 0, r, 1.0)
    exact = np.where(r > 0, charge * erf(r / (sigma * math.sqrt(2.0))) / safe,
                     charge * math.sqrt(2.0 / math.pi) / sigma)
    return r, rho, exact


@dataclass
class PoissonRun:
    method: str
    iterations: int
    seconds: float
    max_rel_error: float        # max |V - V_exact| over r <= 3 sigma, relative to max V_exact
    hartree_energy: float
    residual: float
    coefficients: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    history: List[float] = field(default_factory=list, repr=False)


@dataclass
class PoissonBench:
    sigma: float
    n_points: int
    tol: float
    charge: float
    runs: Dict[str, PoissonRun]
    residual_difference: float = float("nan")    # ||L (x_a - x_b)|| / ||rhs||
    value_difference: float = float("nan")       # max |v_a - v_b| / max |v_a|

    @property
    def speed_ratio(self) -> float:
        if "gmres" in self.runs and "cgnr" in self.runs:
            return self.runs["cgnr"].seconds / self.runs["gmres"].seconds
        return float("nan")


def bench_poisson(ws: Workspace, sigma: float, req, methods: Sequence[str] = ("gmres", "cgnr"),
                  log_dir=None) -> PoissonBench:
    """Solve for the potential of a Gaussian charge with each method and compare."""
    r, rho, exact = gaussian_density(ws, sigma)
    inner = r <= 3.0 * sigma
    runs: Dict[str, PoissonRun] = {}
    for m in methods:
        t0 = time.perf_counter()
        log_path = None if log_dir is None else Path(log_dir) / f"poisson_{m}.csv"
        with stage(f"poisson-{m}"):
            c, v, res = hartree(ws, rho, replace(req, method=m), log_path=log_path)
        dt = time.perf_counter() - t0
        err = float(np.abs(v - exact)[inner].max() / exact.max())
        runs[m] = PoissonRun(m, res.iterations, dt, err, 0.5 * ws.integrate(rho * v), res.residual,
                             c, v, list(res.history))
        log.info("poisson %s: %d iterations, %.1fs, error %.3e", m, res.iterations, dt, err)
    bench = PoissonBench(sigma, ws.grid.size, req.tol, ws.integrate(rho), runs)
    if len(runs) >= 2:
        a, b = list(runs.values())[:2]
        L = ws.laplacian_map()
        rhs = -4.0 * math.pi * ws.grid.scale_a ** 2 * ws.plan.forward(rho)
        bench.residual_difference = float(np.linalg.norm(L.matvec(a.coefficients - b.coefficients))
                                          / np.linalg.norm(rhs))
        bench.value_difference = float(np.abs(a.values - b.values).max() / np.abs(a.values).max())
    return bench
