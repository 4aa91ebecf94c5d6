"""Run configuration: INI-style sections ``system grid pseudo solver scf scan``.

Unknown sections (such as the ``manifest`` block written next to results)
are ignored, so a manifest can be fed back in as a config.
"""
from __future__ import annotations

import configparser
from io import StringIO
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from ..errors import InvalidArgument, ParseError
from ..grid3d import GridSpec, basis, format_grid_notation, parse_grid_notation
from ..scf import MODELS
from ..solvers import EigenRequest, LinearSolveRequest

SECTIONS = ("system", "grid", "pseudo", "solver", "scf", "scan")

# accepted spellings of the pseudopotential kind
PSEUDO_ALIASES = {"const": "cut", "constant": "cut", "cut": "cut", "interp": "interp",
                  "interpolated": "interp", "hgh": "hgh", "bare": "bare", "none": "bare"}


@dataclass(frozen=True)
class GridChoice:
    basis: Optional[int] = None
    notation: Optional[str] = None
    scale_a: float = 1.0

    def spec(self) -> GridSpec:
        if self.basis is not None:
            return basis(self.basis, self.scale_a)
        if self.notation is None:
            raise InvalidArgument("grid needs either a basis number or a notation")
        return parse_grid_notation(self.notation, self.scale_a)

    @property
    def label(self) -> str:
        return f"basis{self.basis}" if self.basis is not None else format_grid_notation(self.spec())


@dataclass(frozen=True)
class RunConfig:
    system: str
    model: Optional[str] = None
    d: Optional[float] = None
    n_electrons: Optional[int] = None
    seed: int = 0
    sigma: float = 1.0
    references: Dict[str, float] = field(default_factory=dict)
    grid: GridChoice = GridChoice(basis=8)
    pseudo: str = "hgh"
    degree: int = 7
    params: Optional[str] = None
    poisson: LinearSolveRequest = LinearSolveRequest()
    eig: EigenRequest = EigenRequest()
    mixing: float = 0.5
    scf_tol: float = 1e-7
    max_scf: int = 60
    adaptive_poisson: bool = True
    scan_d: Tuple[float, ...] = ()
    source: Optional[str] = None

    def with_overrides(self, grid: Optional[str] = None, pseudo: Optional[str] = None,
                       tol: Optional[float] = None, seed: Optional[int] = None) -> "RunConfig":
        cfg = self
        if grid is not None:
            cfg = replace(cfg, grid=_grid_from_text(grid, cfg.grid.scale_a))
        if pseudo is not None:
            cfg = replace(cfg, pseudo=_pseudo_kind(pseudo))
        if tol is not None:
            if not tol > 0:
                raise InvalidArgument("--tol must be positive")
            cfg = replace(cfg, poisson=replace(cfg.poisson, tol=tol), eig=replace(cfg.eig, tol=tol))
        if seed is not None:
            cfg = replace(cfg, seed=seed, eig=replace(cfg.eig, seed=seed))
        return cfg


def _grid_from_text(text: str, scale_a: float) -> GridChoice:
    t = text.strip()
    if t.lower().startswith("basis"):
        t = t[5:].strip()
    if t.isdigit():
        basis(int(t))
        return GridChoice(basis=int(t), scale_a=scale_a)
    parse_grid_notation(t, scale_a)
    return GridChoice(notation=t, scale_a=scale_a)


def _pseudo_kind(text: str) -> str:
    kind = PSEUDO_ALIASES.get(text.strip().lower())
    if kind is None:
        raise InvalidArgument(f"unknown pseudopotential {text!r}; choose from {sorted(PSEUDO_ALIASES)}")
    return kind


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise InvalidArgument(f"[{sec.name}] {key} = {raw!r}: {exc}") from None


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str      # keys are case-sensitive (reference_E)
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc).splitlines()[0], line=line) from None
    if not cp.has_section("system"):
        raise InvalidArgument("config needs a [system] section")
    sy = cp["system"]
    g = cp["grid"] if cp.has_section("grid") else None
    ps = cp["pseudo"] if cp.has_section("pseudo") else None
    so = cp["solver"] if cp.has_section("solver") else None
    sc = cp["scf"] if cp.has_section("scf") else None
    sn = cp["scan"] if cp.has_section("scan") else None

    name = sy.get("name", "").strip()
    if not name:
        raise InvalidArgument("[system] name is required")
    model = _get(sy, "model", str, None)
    if model is not None and model not in MODELS:
        raise InvalidArgument(f"[system] model {model!r} is not one of {MODELS}")
    refs = {k[len("reference_"):]: _get(sy, k, float, None) for k in sy if k.startswith("reference_")}

    scale_a = _get(g, "scale_a", float, 1.0)
    if g is not None and "basis" in g and "notation" in g:
        raise InvalidArgument("[grid] give basis or notation, not both")
    if g is not None and "notation" in g:
        grid = _get(g, "notation", lambda t: _grid_from_text(t, scale_a), None)
    else:
        grid = GridChoice(basis=_get(g, "basis", int, 8), scale_a=scale_a)
    grid.spec()

    pseudo = _get(ps, "kind", _pseudo_kind, "hgh")
    degree = _get(ps, "degree", int, 7)
    params = _get(ps, "params", str, None)

    poisson = LinearSolveRequest(
        method=_get(so, "poisson", str, "gmres"),
        tol=_get(so, "poisson_tol", float, 1e-8),
        max_iter=_get(so, "max_iter", int, 5000),
        restart_len=_get(so, "restart", int, 100),
    )
    eig = EigenRequest(
        nev=_get(so, "nev", int, 1),
        subspace_dim=_get(so, "subspace", int, 30),
        tol=_get(so, "eig_tol", float, 1e-8),
        max_restarts=_get(so, "max_restarts", int, 500),
        seed=_get(sy, "seed", int, 0),
    )
    cfg = RunConfig(
        system=name,
        model=model,
        d=_get(sy, "d", float, None),
        n_electrons=_get(sy, "n_electrons", int, None),
        seed=_get(sy, "seed", int, 0),
        sigma=_get(sy, "sigma", float, 1.0),
        references={k: v for k, v in refs.items() if v is not None},
        grid=grid,
        pseudo=pseudo,
        degree=degree,
        params=params,
        poisson=poisson,
        eig=eig,
        mixing=_get(sc, "mixing", float, 0.5),
        scf_tol=_get(sc, "tol", float, 1e-7),
        max_scf=_get(sc, "max_iter", int, 60),
        adaptive_poisson=_get(sc, "adaptive_poisson", _bool, True),
        scan_d=_get(sn, "d", _floats, ()),
        source=source,
    )
    if not 0 < cfg.mixing <= 1:
        raise InvalidArgument("[scf] mixing must lie in (0, 1]")
    if cfg.scan_d and len(cfg.scan_d) != 3:
        raise InvalidArgument("[scan] d needs exactly three bond lengths")
    if cfg.degree < 1 or cfg.degree % 2 == 0:
        raise InvalidArgument("[pseudo] degree must be an odd positive integer")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def format_config(cfg: RunConfig) -> str:
    """Render ``cfg`` in the same format :func:`parse_config` reads."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    sy = {"name": cfg.system, "seed": str(cfg.seed)}
    if cfg.model is not None:
        sy["model"] = cfg.model
    if cfg.d is not None:
        sy["d"] = repr(cfg.d)
    if cfg.n_electrons is not None:
        sy["n_electrons"] = str(cfg.n_electrons)
    if cfg.sigma != 1.0:
        sy["sigma"] = repr(cfg.sigma)
    for k, v in cfg.references.items():
        sy[f"reference_{k}"] = repr(v)
    cp["system"] = sy
    gr = {"scale_a": repr(cfg.grid.scale_a)}
    if cfg.grid.basis is not None:
        gr["basis"] = str(cfg.grid.basis)
    else:
        gr["notation"] = cfg.grid.notation
    cp["grid"] = gr
    pseudo = {"kind": cfg.pseudo, "degree": str(cfg.degree)}
    if cfg.params:
        pseudo["params"] = cfg.params
    cp["pseudo"] = pseudo
    cp["solver"] = {
        "poisson": cfg.poisson.method, "poisson_tol": repr(cfg.poisson.tol),
        "max_iter": str(cfg.poisson.max_iter), "restart": str(cfg.poisson.restart_len),
        "nev": str(cfg.eig.nev), "subspace": str(cfg.eig.subspace_dim), "eig_tol": repr(cfg.eig.tol),
        "max_restarts": str(cfg.eig.max_restarts),
    }
    cp["scf"] = {"mixing": repr(cfg.mixing), "tol": repr(cfg.scf_tol), "max_iter": str(cfg.max_scf),
                 "adaptive_poisson": str(cfg.adaptive_poisson).lower()}
    if cfg.scan_d:
        cp["scan"] = {"d": ", ".join(repr(x) for x in cfg.scan_d)}
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()
