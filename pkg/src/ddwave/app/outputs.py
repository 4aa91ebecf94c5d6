"""CSV tables and the plain-text run manifest."""
from __future__ import annotations

import csv
import platform
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy

from .. import __version__
from .config import RunConfig, format_config
from .experiments import BondScanResult, ExcitedStates, RunReport

SUMMARY_HEADER = ["source", "basis", "g", "pseudopot", "E", "system", "model", "d", "eps_1",
                  "reference_E", "delta_E", "points", "scf_iterations", "poisson_iterations", "seconds"]
DISSOCIATION_HEADER = ["d", "E"]
RADIAL_HEADER = ["r", "f_bar", "g_bar"]
SOURCE = "ddwave"


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else f"{x:.6f}"


def summary_rows(reports: Iterable[RunReport]) -> Iterable[list]:
    for r in reports:
        ref = r.references.get("E")
        yield [SOURCE, r.grid_label, f"{r.g:g}", r.pseudo, _num(r.E_total), r.system, r.model,
               _num(r.d), _num(r.eps[0] if r.eps else None), _num(ref),
               _num(r.E_total - ref if ref is not None else None), r.n_points, r.scf_iterations,
               r.poisson_iterations, f"{r.timings.get('total', 0.0):.1f}"]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
    return path


def manifest_text(cfg: Optional[RunConfig], timings: Optional[Dict[str, float]] = None,
                  extra: Optional[Dict[str, str]] = None) -> str:
    """Config echo followed by a ``[manifest]`` section; parseable as a config."""
    lines = [format_config(cfg).rstrip(), ""] if cfg is not None else []
    lines.append("[manifest]")
    info = {"ddwave": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform()}
    if cfg is not None and cfg.source:
        info["config_file"] = cfg.source
    for k, v in (timings or {}).items():
        info[f"seconds_{k}"] = f"{v:.3f}"
    info.update(extra or {})
    lines += [f"{k} = {v}" for k, v in info.items()]
    return "\n".join(lines) + "\n"


def emit_outputs(out_dir, cfg: Optional[RunConfig] = None, reports: Sequence[RunReport] = (),
                 scan: Optional[BondScanResult] = None,
                 radial: Optional[Sequence[Tuple[float, float, float]]] = None,
                 timings: Optional[Dict[str, float]] = None,
                 extra: Optional[Dict[str, str]] = None) -> Dict[str, Path]:
    """Write ``summary.csv``, ``dissociation.csv``, ``radial.csv`` and ``manifest.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": write_csv(out / "summary.csv", SUMMARY_HEADER, summary_rows(reports))}
    curve = []
    if scan is not None:
        curve = sorted([*scan.samples, (scan.d_min, scan.E_min)])
    paths["dissociation"] = write_csv(out / "dissociation.csv", DISSOCIATION_HEADER,
                                      ([_num(d), _num(e)] for d, e in curve))
    paths["radial"] = write_csv(out / "radial.csv", RADIAL_HEADER,
                                ([f"{r:.6f}", f"{f:.10e}", f"{g:.10e}"] for r, f, g in (radial or ())))
    paths["manifest"] = out / "manifest.txt"
    paths["manifest"].write_text(manifest_text(cfg, timings, extra))
    return paths


def write_scan(out_dir, scan: BondScanResult) -> Path:
    row = [_num(scan.d_min), _num(scan.E_min), _num(scan.E_binding), _num(scan.E_atoms),
           *(f"{c:.10e}" for c in scan.fit)]
    return write_csv(Path(out_dir) / "scan.csv",
                     ["d_min", "E_min", "E_binding", "E_atoms", "alpha", "beta", "gamma"], [row])


def write_excited(out_dir, ex: ExcitedStates) -> Tuple[Path, Path]:
    out = Path(out_dir)
    p1 = write_csv(out / "excited.csv", ["label", "energy", "w_1s", "w_2s", "w_2p", "quality", "residual"],
                   ([s.label, f"{s.energy:.6f}", f"{s.weights['1s']:.6f}", f"{s.weights['2s']:.6f}",
                     f"{s.weights['2p']:.6f}", f"{s.quality:.3e}", f"{res:.2e}"]
                    for s, res in zip(ex.states, ex.residuals)))
    labels = [s.label for s in ex.states]
    p2 = write_csv(out / "overlaps.csv", ["", *labels],
                   ([lab, *(f"{v:.3e}" for v in row)] for lab, row in zip(labels, ex.overlaps)))
    return p1, p2
