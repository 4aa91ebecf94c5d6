"""Command line entry point: ``ddwave {run,scan,excited,bench-poisson} CONFIG``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..errors import (BracketError, ConvergenceError, InvalidArgument, MissingParameter, ParseError,
                      UnsupportedFeature)
from ..grid3d import build_grid
from ..scf import ScfConfig, Workspace
from .config import RunConfig, load_config
from .experiments import bench_poisson, bond_scan, excited_states, radial_average, run_system
from .outputs import emit_outputs, write_csv, write_excited, write_scan
from .systems import make_system

EXIT_OK, EXIT_CONVERGENCE, EXIT_CONFIG = 0, 2, 3

log = logging.getLogger("ddwave")


def scf_config(cfg: RunConfig, model: str) -> ScfConfig:
    return ScfConfig(model=model, mixing=cfg.mixing, scf_tol=cfg.scf_tol, max_scf=cfg.max_scf,
                     poisson=cfg.poisson, eig=cfg.eig, adaptive_poisson=cfg.adaptive_poisson)


def system_from(cfg: RunConfig, d: Optional[float] = None):
    return make_system(cfg.system, cfg.grid.spec(), cfg.pseudo, d if d is not None else cfg.d,
                       cfg.model, cfg.n_electrons, cfg.params, cfg.references)


def radial_samples(ws: Workspace, n: int = 41) -> np.ndarray:
    g = ws.grid
    outer = min(b.hi.min() * 2.0 ** -b.j for b in g.blocks) * g.scale_a
    return np.linspace(0.0, 0.9 * outer, n)


def cmd_run(cfg: RunConfig, out: Path) -> int:
    defn = system_from(cfg)
    rep = run_system(defn, scf_config(cfg, defn.model), cfg.grid.label,
                     trace_path=out / "scf_trace.csv", poisson_log=out / "poisson.csv", degree=cfg.degree)
    ws = rep.workspace
    center = np.mean([n.R for n in defn.nuclei], axis=0)
    c = rep.state.orbitals[0]
    v = ws.values(c)
    if v[np.argmax(np.abs(v))] < 0:
        c = -c
    radial = radial_average(ws, c, center, radial_samples(ws))
    emit_outputs(out, cfg, [rep], radial=radial, timings=rep.timings)
    print(f"{defn.name} {cfg.grid.label} {rep.pseudo} {defn.model}: E = {rep.E_total:.6f} Ha, "
          f"eps_1 = {rep.eps[0]:.6f} Ha ({rep.n_points} points, {rep.timings['total']:.1f} s)")
    for k, v in rep.deltas.items():
        print(f"  {k} - reference = {v:+.6f}")
    return EXIT_OK


def cmd_scan(cfg: RunConfig, out: Path) -> int:
    if not cfg.scan_d:
        raise InvalidArgument("[scan] d is required for the scan command")
    defn = system_from(cfg, d=cfg.scan_d[1])
    t0 = time.perf_counter()
    res = bond_scan(defn, cfg.scan_d, scf_config(cfg, defn.model), cfg.params, cfg.degree, cfg.grid.label)
    emit_outputs(out, cfg, res.reports, scan=res, timings={"total": time.perf_counter() - t0})
    write_scan(out, res)
    print(f"{defn.name} {cfg.grid.label}: d_min = {res.d_min:.6f} B, E = {res.E_min:.6f} Ha, "
          f"E_binding = {res.E_binding:.6f} Ha")
    return EXIT_OK


def cmd_excited(cfg: RunConfig, out: Path) -> int:
    defn = system_from(cfg)
    eig = cfg.eig if cfg.eig.nev >= 5 else type(cfg.eig)(5, max(cfg.eig.subspace_dim, 30), cfg.eig.tol,
                                                           cfg.eig.max_restarts, cfg.eig.seed)
    t0 = time.perf_counter()
    ex = excited_states(defn, eig, cfg.degree)
    emit_outputs(out, cfg, timings={"total": time.perf_counter() - t0})
    write_excited(out, ex)
    for s in ex.states:
        print(f"{s.label:6s} {s.energy:.6f} Ha  quality {s.quality:.2e}")
    print(f"max off-diagonal overlap {ex.max_offdiag_overlap:.3e}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    t0 = time.perf_counter()
    ws = Workspace(build_grid(cfg.grid.spec()), [])
    b = bench_poisson(ws, cfg.sigma, cfg.poisson, log_dir=out)
    rows = [[r.method, r.iterations, f"{r.seconds:.2f}", f"{r.max_rel_error:.4e}", f"{r.hartree_energy:.8f}",
             f"{r.residual:.3e}"] for r in b.runs.values()]
    write_csv(out / "bench.csv", ["method", "iterations", "seconds", "max_rel_error", "E_H", "residual"], rows)
    emit_outputs(out, cfg, timings={"total": time.perf_counter() - t0},
                 extra={"speed_ratio_cgnr_over_gmres": f"{b.speed_ratio:.3f}"})
    for r in b.runs.values():
        print(f"{r.method:6s} {r.iterations:7d} iterations {r.seconds:8.1f} s  error {r.max_rel_error:.3%}")
    print(f"CGNR / GMRES time ratio {b.speed_ratio:.2f}; solution residual difference "
          f"{b.residual_difference:.2e}, value difference {b.value_difference:.2e}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "scan": cmd_scan, "excited": cmd_excited, "bench-poisson": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddwave", description="Interpolating-wavelet electronic structure runs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="config file")
        s.add_argument("--grid", help="basis number or grid notation, e.g. '1/2 Z20^3 u 1/4 Z10^3'")
        s.add_argument("--pseudo", help="const, interp, hgh or bare")
        s.add_argument("--tol", type=float, help="eigen and Poisson solver tolerance")
        s.add_argument("--seed", type=int, help="random seed for start vectors")
        s.add_argument("--out-dir", default="results", help="output directory (default: results)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.grid, args.pseudo, args.tol, args.seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (ConvergenceError, BracketError) as exc:
        print(f"error [{getattr(exc, 'stage', None) or args.command}]: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ParseError, InvalidArgument, MissingParameter, UnsupportedFeature) as exc:
        print(f"config error [{getattr(exc, 'stage', None) or 'config'}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
