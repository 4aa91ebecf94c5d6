"""Nuclear potentials: regularised Coulomb models and HGH pseudopotentials."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.special import erf, gamma

from .errors import InvalidArgument, MissingParameter, ParseError

KINDS = ("bare", "interp", "cut", "hgh")
DATA_DIR = Path(__file__).parent / "data"


# ---------------------------------------------------------------- regularised Coulomb

@dataclass(frozen=True)
class PseudoCutoff:
    """Cutoff radius ``c`` (Bohr) and odd interpolation degree ``D``."""

    c: float
    D: int = 7

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgument("cutoff must be positive")
        if self.D < 1 or self.D % 2 == 0:
            raise InvalidArgument("interpolation degree must be a positive odd integer")

    @property
    def n(self) -> int:
        return (self.D + 1) // 2

    @classmethod
    def for_grid(cls, grid, D: int = 7) -> "PseudoCutoff":
        """The finest grid spacing in Bohr."""
        return cls(grid.scale_a * 2.0 ** -grid.jmax, D)


def _interp_poly(c: float, D: int) -> BarycentricInterpolator:
    n = (D + 1) // 2
    nodes = np.concatenate([-c * np.arange(n, 0, -1), c * np.arange(1, n + 1)])
    # values of -1/|s|: the even extension keeps P smooth through the origin
    return BarycentricInterpolator(nodes, -1.0 / np.abs(nodes))


def v_interp(cut: PseudoCutoff, r):
    """``-1/r`` outside ``c``; inside, the polynomial through ``-1/|s|`` at ``s = +-c, ..., +-nc``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidArgument("radius must be non-negative")
    poly = _interp_poly(cut.c, cut.D)
    inner = r < cut.c
    with np.errstate(divide="ignore"):
        out = np.where(inner, 0.0, -1.0 / np.where(inner, 1.0, r))
    if np.any(inner):
        out = np.where(inner, poly(np.where(inner, r, 0.0)), out)
    return out if out.ndim else float(out)


def v_cut(c: float, r):
    """``-1/r`` clipped to the plateau ``-1/c`` inside ``c``."""
    if not c > 0:
        raise InvalidArgument("cutoff must be positive")
    r = np.asarray(r, dtype=float)
    out = -1.0 / np.maximum(r, c)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- HGH

@dataclass(frozen=True)
class HghChannel:
    l: int
    r: float
    h: np.ndarray  # (3, 3) symmetric coupling matrix

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (3, 3):
            raise InvalidArgument("coupling matrix must be 3x3")
        if not np.allclose(h, h.T, rtol=0, atol=1e-12):
            raise InvalidArgument("coupling matrix must be symmetric")
        if not self.r > 0:
            raise InvalidArgument("projector radius must be positive")
        object.__setattr__(self, "h", h)

    @property
    def nproj(self) -> int:
        nz = [i for i in range(3) if np.any(self.h[i] != 0)]
        return max(nz) + 1 if nz else 0

    def __eq__(self, other):
        return (isinstance(other, HghChannel) and self.l == other.l and self.r == other.r
                and np.array_equal(self.h, other.h))


@dataclass(frozen=True)
class HghParams:
    element: str
    Z_ion: float
    r_loc: float
    C: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    channels: Tuple[HghChannel, ...] = ()
    source: str = ""

    def __post_init__(self):
        if not self.r_loc > 0:
            raise InvalidArgument("r_loc must be positive")
        C = tuple(float(x) for x in self.C) + (0.0,) * (4 - len(self.C))
        object.__setattr__(self, "C", C[:4])
        object.__setattr__(self, "channels", tuple(self.channels))

    def __eq__(self, other):
        return (isinstance(other, HghParams) and self.element == other.element
                and self.Z_ion == other.Z_ion and self.r_loc == other.r_loc
                and self.C == other.C and self.channels == other.channels)


def hgh_local(p: HghParams, r):
    """Local HGH part; finite at ``r = 0`` where it equals ``-Z_ion/r_loc sqrt(2/pi) + C1``."""
    r = np.asarray(r, dtype=float)
    x = r / p.r_loc
    small = r < 1e-8 * p.r_loc
    safe = np.where(small, 1.0, r)
    coul = np.where(small,
                    -p.Z_ion / p.r_loc * math.sqrt(2.0 / math.pi) * (1.0 - x * x / 6.0),
                    -p.Z_ion / safe * erf(safe / (math.sqrt(2.0) * p.r_loc)))
    C1, C2, C3, C4 = p.C
    x2 = x * x
    out = coul + np.exp(-0.5 * x2) * (C1 + x2 * (C2 + x2 * (C3 + x2 * C4)))
    return out if out.ndim else float(out)


def hgh_projector(l: int, i: int, r_l: float, r):
    """Radial projector ``p_i^l(r)``, normalised so that ``int p^2 r^2 dr = 1``."""
    if i < 1 or i > 3:
        raise InvalidArgument("projector index must be 1, 2 or 3")
    r = np.asarray(r, dtype=float)
    e = l + (4 * i - 1) / 2.0
    return (math.sqrt(2.0) * r ** (l + 2 * (i - 1)) * np.exp(-0.5 * (r / r_l) ** 2)
            / (r_l ** e * math.sqrt(gamma(e))))


def real_harmonics(l: int, xyz: np.ndarray) -> np.ndarray:
    """Real orthonormal spherical harmonics of degree ``l`` at points ``xyz`` (N, 3): shape (2l+1, N)."""
    xyz = np.atleast_2d(xyz)
    if l == 0:
        return np.full((1, len(xyz)), 0.5 / math.sqrt(math.pi))
    if l == 1:
        r = np.linalg.norm(xyz, axis=1)
        safe = np.where(r > 0, r, 1.0)
        unit = np.where(r[:, None] > 0, xyz / safe[:, None], 0.0)
        return math.sqrt(3.0 / (4.0 * math.pi)) * unit.T   # x, y, z order
    raise InvalidArgument(f"real harmonics only implemented for l <= 1, got {l}")


# ---------------------------------------------------------------- nuclei

@dataclass(frozen=True)
class Nucleus:
    Z: float
    R: Tuple[float, float, float]
    kind: str = "hgh"
    hgh: Optional[HghParams] = None

    def __post_init__(self):
        if not self.Z > 0:
            raise InvalidArgument("nuclear charge must be positive")
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown potential kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "hgh" and self.hgh is None:
            raise InvalidArgument("an hgh nucleus needs HGH parameters")
        object.__setattr__(self, "R", tuple(float(x) for x in self.R))

    @property
    def charge(self) -> float:
        """Charge seen by other nuclei and valence electrons."""
        return self.hgh.Z_ion if self.kind == "hgh" else self.Z

    def potential(self, r, cut: Optional[PseudoCutoff] = None):
        if self.kind == "hgh":
            return hgh_local(self.hgh, r)
        if self.kind == "bare":
            r = np.asarray(r, dtype=float)
            if np.any(r == 0):
                raise InvalidArgument("bare Coulomb potential evaluated at a nucleus; use a pseudopotential")
            return -self.Z / r
        if cut is None:
            raise InvalidArgument(f"{self.kind} potential needs a cutoff")
        if self.kind == "interp":
            return self.Z * v_interp(cut, r)
        # plateau at half the interpolation cutoff
        return self.Z * v_cut(cut.c / 2.0, r)


def nuclear_potential_values(nuclei: Sequence[Nucleus], grid, scale_a: Optional[float] = None,
                             cut: Optional[PseudoCutoff] = None) -> np.ndarray:
    """Point values of the summed local nuclear potential on every grid point."""
    a = grid.scale_a if scale_a is None else scale_a
    if cut is None:
        cut = PseudoCutoff.for_grid(grid)
    pts = grid.coords * a
    out = np.zeros(grid.size)
    for nuc in nuclei:
        r = np.linalg.norm(pts - np.asarray(nuc.R), axis=1)
        out += nuc.potential(r, cut)
    return out


def repulsion_energy(nuclei: Sequence[Nucleus]) -> float:
    e = 0.0
    for i, a in enumerate(nuclei):
        for b in nuclei[i + 1:]:
            d = math.dist(a.R, b.R)
            if d == 0:
                raise InvalidArgument("coincident nuclei")
            e += a.charge * b.charge / d
    return e


# ---------------------------------------------------------------- parameter files

def _floats(tokens, lineno, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric {what}", line=lineno) from None


def parse_hgh_text(text: str) -> Dict[str, HghParams]:
    """Parse ``element <X> <Z_ion> <r_loc> <C1..C4>`` blocks with ``channel`` lines.

    A channel line is ``channel <l> <r_l>`` followed by the upper triangle
    ``h11 h12 h13 h22 h23 h33`` or all nine entries of a symmetric matrix.
    Comments start with ``#``; a ``# source:`` comment is kept with the entry.
    """
    out: Dict[str, HghParams] = {}
    cur = None
    source = ""

    def flush():
        if cur is not None:
            name, zion, rloc, C, chans, src = cur
            try:
                out[name] = HghParams(name, zion, rloc, tuple(C), tuple(chans), src)
            except InvalidArgument as exc:
                raise ParseError(str(exc), line=cur_line) from None

    cur_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line, _, comment = raw.partition("#")
        if comment.strip().lower().startswith("source:"):
            source = comment.strip()[7:].strip()
        tok = line.split()
        if not tok:
            continue
        head = tok[0].lower()
        if head == "element":
            flush()
            if len(tok) < 4 or len(tok) > 8:
                raise ParseError("element line needs: element <X> <Z_ion> <r_loc> [C1 .. C4]", line=lineno)
            vals = _floats(tok[2:], lineno, "element field")
            if tok[1] in out:
                raise ParseError(f"duplicate element {tok[1]}", line=lineno)
            cur = [tok[1], vals[0], vals[1], vals[2:], [], source]
            cur_line = lineno
            source = ""
        elif head == "channel":
            if cur is None:
                raise ParseError("channel line before any element line", line=lineno)
            if len(tok) not in (3 + 6, 3 + 9):
                raise ParseError("channel line needs l, r_l and 6 (upper) or 9 (full) h entries", line=lineno)
            try:
                l = int(tok[1])
            except ValueError:
                raise ParseError("channel l must be an integer", line=lineno) from None
            vals = _floats(tok[2:], lineno, "channel field")
            r_l, hv = vals[0], vals[1:]
            if len(hv) == 6:
                h = np.zeros((3, 3))
                h[np.triu_indices(3)] = hv
                h = h + np.triu(h, 1).T
            else:
                h = np.array(hv).reshape(3, 3)
                if not np.allclose(h, h.T, rtol=0, atol=1e-12):
                    raise ParseError("coupling matrix is not symmetric", line=lineno)
            try:
                cur[4].append(HghChannel(l, r_l, h))
            except InvalidArgument as exc:
                raise ParseError(str(exc), line=lineno) from None
        else:
            raise ParseError(f"unknown record {tok[0]!r}", line=lineno)
    flush()
    return out


def load_hgh_parameters(path=None) -> Dict[str, HghParams]:
    """Read a parameter file (default: the bundled HGH table)."""
    path = Path(path) if path is not None else DATA_DIR / "hgh.txt"
    return parse_hgh_text(path.read_text())


def format_hgh_parameters(params: Dict[str, HghParams]) -> str:
    lines = []
    for p in params.values():
        if p.source:
            lines.append(f"# source: {p.source}")
        lines.append("element {} {!r} {!r} {}".format(p.element, p.Z_ion, p.r_loc,
                                                      " ".join(repr(c) for c in p.C)))
        for ch in p.channels:
            upper = ch.h[np.triu_indices(3)]
            lines.append("channel {} {!r} {}".format(ch.l, ch.r, " ".join(repr(float(v)) for v in upper)))
        lines.append("")
    return "\n".join(lines)


def write_hgh_parameters(params: Dict[str, HghParams], path) -> None:
    Path(path).write_text(format_hgh_parameters(params))


def hgh_for(element: str, params: Optional[Dict[str, HghParams]] = None) -> HghParams:
    params = load_hgh_parameters() if params is None else params
    try:
        return params[element]
    except KeyError:
        raise MissingParameter(f"no HGH parameters for element {element!r}") from None
