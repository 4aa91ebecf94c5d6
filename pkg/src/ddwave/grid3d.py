"""Multilevel point grids built from one axis-aligned box per resolution level.

A level ``j`` box with half-widths ``(nx, ny, nz)`` holds the points
``k / 2**j`` with ``|k_d| <= n_d``. Level ``j > jmin`` keeps only the points
that are new at that level, i.e. those with at least one odd coordinate.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument, ParseError

Triple = Tuple[int, int, int]


@dataclass(frozen=True)
class GridLevel:
    j: int
    half: Triple

    def __post_init__(self):
        if len(self.half) != 3 or any(int(n) < 0 for n in self.half):
            raise InvalidArgument(f"bad half-widths {self.half!r}")
        object.__setattr__(self, "half", tuple(int(n) for n in self.half))

    @property
    def shape(self) -> Triple:
        return tuple(2 * n + 1 for n in self.half)


@dataclass(frozen=True)
class GridSpec:
    levels: Tuple[GridLevel, ...]
    scale_a: float = 1.0

    def __post_init__(self):
        levels = tuple(sorted(self.levels, key=lambda lv: lv.j))
        if not levels:
            raise InvalidArgument("a grid needs at least one level")
        js = [lv.j for lv in levels]
        if len(set(js)) != len(js):
            raise InvalidArgument(f"duplicate levels {js}")
        if not self.scale_a > 0:
            raise InvalidArgument("scale_a must be positive")
        object.__setattr__(self, "levels", levels)

    @property
    def jmin(self) -> int:
        return self.levels[0].j

    @property
    def jmax(self) -> int:
        return self.levels[-1].j

    @property
    def finest_spacing(self) -> float:
        """Distance between neighbouring finest-level points, in Bohr."""
        return self.scale_a * 2.0 ** -self.jmax

    def with_scale(self, scale_a: float) -> "GridSpec":
        return GridSpec(self.levels, scale_a)

    def __str__(self):
        return format_grid_notation(self)


# ---------------------------------------------------------------- notation

_WS = re.compile(r"\s*")
_FRAC = re.compile(r"(½|1\s*/\s*(\d+)|(\d+))")
_ZTERM = re.compile(r"Z\s*(?:±|\+-|\+/-)?\s*(\d+)(?:\s*(\^\s*3|³))?")
_SEP = re.compile(r"(u|U|∪|\|)")
_TIMES = re.compile(r"(x|×|\*)")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def at_end(self):
        self.skip()
        return self.pos >= len(self.text)

    def peek(self, s):
        self.skip()
        return self.text.startswith(s, self.pos)

    def take(self, rx):
        self.skip()
        mt = rx.match(self.text, self.pos)
        if mt:
            self.pos = mt.end()
        return mt

    def fail(self, what):
        raise ParseError(f"expected {what} in grid notation {self.text!r}", position=self.pos)

    def level_of(self, mt) -> int:
        if mt.group(1) == "½":
            return 1
        if mt.group(2) is not None:
            den = int(mt.group(2))
        else:
            # a bare integer 2**p means a coarser level -p; 1 means level 0
            num = int(mt.group(3))
            if num < 1 or num & (num - 1):
                self.fail("a power of two")
            return -(num.bit_length() - 1)
        if den < 1 or den & (den - 1):
            self.fail("a power-of-two denominator")
        return den.bit_length() - 1

    def box(self) -> Triple:
        self.skip()
        paren = self.peek("(")
        if paren:
            self.pos += 1
        mt = self.take(_ZTERM)
        if not mt:
            self.fail("'Z<n>'")
        dims = [int(mt.group(1))]
        cube = mt.group(2) is not None
        if not cube:
            while self.take(_TIMES):
                mt = self.take(_ZTERM)
                if not mt or mt.group(2) is not None:
                    self.fail("'Z<n>' after 'x'")
                dims.append(int(mt.group(1)))
            if len(dims) == 1:
                self.skip()
                while self.peek(","):
                    self.pos += 1
                    num = self.take(re.compile(r"\d+"))
                    if not num:
                        self.fail("an integer after ','")
                    dims.append(int(num.group(0)))
        if paren:
            if not self.peek(")"):
                self.fail("')'")
            self.pos += 1
        if len(dims) == 1:
            dims = dims * 3
        if len(dims) != 3:
            self.fail("one or three box half-widths")
        return tuple(dims)

    def term(self) -> GridLevel:
        j = 0
        mt = self.take(_FRAC)
        if mt:
            j = self.level_of(mt)
        half = self.box()
        if self.peek("@"):
            self.pos += 1
            mt = self.take(_FRAC)
            if not mt:
                self.fail("a scale after '@'")
            j = self.level_of(mt)
        return GridLevel(j, half)

    def parse(self) -> List[GridLevel]:
        if self.at_end():
            self.fail("at least one term")
        terms = [self.term()]
        while not self.at_end():
            if not self.take(_SEP):
                self.fail("'u' between terms")
            terms.append(self.term())
        return terms


def parse_grid_notation(text: str, scale_a: float = 1.0) -> GridSpec:
    """Parse grid notation such as ``"1/2 Z20^3 u 1/4 Z10^3"``.

    A term is ``[1/2^p] Z<n>^3``, ``[1/2^p] Z<nx>xZ<ny>xZ<nz>`` or the same box
    followed by ``@ 1/2^p``. Terms are joined by ``u`` (or ``∪``). ``Z±n``,
    ``½`` and ``³`` are accepted as well. A bare name ``basis<N>`` selects a
    predefined grid from :data:`BASES`.
    """
    if not isinstance(text, str):
        raise ParseError("grid notation must be a string", position=0)
    stripped = text.strip()
    mt = re.fullmatch(r"basis\s*(\d+)", stripped, flags=re.IGNORECASE)
    if mt:
        return basis(int(mt.group(1)), scale_a)
    levels = _Parser(text).parse()
    js = [lv.j for lv in levels]
    if len(set(js)) != len(js):
        raise ParseError(f"level repeated in grid notation {text!r}", position=0)
    return GridSpec(tuple(levels), scale_a)


def _fmt_scale(j: int) -> str:
    if j == 0:
        return ""
    if j > 0:
        return f"1/{2 ** j} "
    return f"{2 ** -j} "


def format_grid_notation(spec: GridSpec) -> str:
    terms = []
    for lv in spec.levels:
        nx, ny, nz = lv.half
        box = f"Z{nx}^3" if nx == ny == nz else f"Z{nx}xZ{ny}xZ{nz}"
        terms.append(_fmt_scale(lv.j) + box)
    return " u ".join(terms)


BASES: Dict[int, str] = {
    1: "1/2 Z20^3",
    2: "1/2 Z20^3 u 1/4 Z10^3",
    3: "1/2 Z20^3 u 1/4 Z10^3 u 1/8 Z4xZ4xZ10",
    4: "1/4 Z60^3",
    5: "1/2 Z30^3 u 1/4 Z15^3",
    6: "Z38^3 u 1/2 Z19^3",
    7: "1/4 Z40^3",
    8: "Z10^3 u 1/2 Z10^3",
    9: "1/2 Z20^3 u 1/4 Z20^3",
    10: "1/4 Z40^3 u 1/8 Z40^3",
    11: "Z10^3 u 1/2 Z5^3",
    12: "1/2 Z20^3 u 1/4 Z10^3 u 1/8 Z4xZ4xZ15",
    13: "1/4 Z40^3 u 1/8 Z20^3",
    14: "1/4 Z60^3 u 1/8 Z30^3",
}


def basis(number: int, scale_a: float = 1.0) -> GridSpec:
    """One of the numbered reference grids in :data:`BASES`."""
    if number not in BASES:
        raise InvalidArgument(f"unknown basis {number}; known: {sorted(BASES)}")
    return parse_grid_notation(BASES[number], scale_a)


def symmetrize_for_atom(spec: GridSpec) -> GridSpec:
    """Replace each anisotropic box by the cube of its smallest half-width."""
    return GridSpec(tuple(GridLevel(lv.j, (min(lv.half),) * 3) for lv in spec.levels),
                    spec.scale_a)


# ---------------------------------------------------------------- the grid

@dataclass(frozen=True)
class LevelBlock:
    """Points of one level, stored as a mask over the level's full box."""

    j: int
    iota: int
    lo: np.ndarray          # lowest integer coordinate per axis (= -half)
    mask: np.ndarray        # bool, shape = box shape; False at inherited points
    offset: int             # start of this level in the flat vector
    count: int

    @property
    def shape(self) -> Triple:
        return self.mask.shape

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.array(self.mask.shape) - 1

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.count)

    def axis_range(self, d: int) -> np.ndarray:
        return np.arange(self.lo[d], self.lo[d] + self.mask.shape[d])


@dataclass(frozen=True)
class MultiGrid:
    spec: GridSpec
    blocks: Tuple[LevelBlock, ...]
    size: int
    _lookup: Dict[int, LevelBlock] = field(repr=False, compare=False, default_factory=dict)

    @property
    def jmin(self) -> int:
        return self.spec.jmin

    @property
    def jmax(self) -> int:
        return self.spec.jmax

    @property
    def scale_a(self) -> float:
        return self.spec.scale_a

    def __len__(self):
        return self.size

    def level(self, j: int) -> LevelBlock:
        try:
            return self._lookup[j]
        except KeyError:
            raise InvalidArgument(f"grid has no level {j}") from None

    def __iter__(self) -> Iterator[LevelBlock]:
        return iter(self.blocks)

    # flat vector <-> per-level full boxes

    def scatter(self, vec: np.ndarray) -> List[np.ndarray]:
        """Per-level full-box arrays with zeros at points not on the level."""
        vec = np.asarray(vec)
        if vec.shape[0] != self.size:
            raise InvalidArgument(f"vector length {vec.shape[0]} != grid size {self.size}")
        out = []
        for b in self.blocks:
            box = np.zeros(b.shape, dtype=vec.dtype)
            box[b.mask] = vec[b.slice]
            out.append(box)
        return out

    def gather(self, boxes: Sequence[np.ndarray], dtype=float) -> np.ndarray:
        vec = np.empty(self.size, dtype=dtype)
        for b, box in zip(self.blocks, boxes):
            vec[b.slice] = box[b.mask]
        return vec

    # point bookkeeping

    @cached_property
    def integer_coords(self) -> np.ndarray:
        """``k = 2**j alpha`` for every point, shape (N, 3)."""
        parts = []
        for b in self.blocks:
            idx = np.nonzero(b.mask)
            parts.append(np.stack([idx[d] + b.lo[d] for d in range(3)], axis=1))
        return np.concatenate(parts).astype(np.int64)

    @cached_property
    def point_levels(self) -> np.ndarray:
        return np.concatenate([np.full(b.count, b.j, dtype=np.int64) for b in self.blocks])

    @cached_property
    def coords(self) -> np.ndarray:
        """Point positions in grid units, shape (N, 3)."""
        return self.integer_coords * (2.0 ** -self.point_levels)[:, None]

    def physical_coords(self) -> np.ndarray:
        return self.coords * self.scale_a

    def decomposition(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(iota, t, l)`` for every point: level shift, parity type, translation."""
        k = self.integer_coords
        j = self.point_levels
        coarse = (j == self.jmin)[:, None]
        t = np.where(coarse, 0, k & 1)
        l = np.where(coarse, k, k >> 1)
        iota = np.where(j == self.jmin, j, j - 1)
        return iota, t, l

    def offset_of(self, j: int, k: Sequence[int]) -> int:
        b = self.level(j)
        idx = tuple(int(k[d]) - int(b.lo[d]) for d in range(3))
        if any(i < 0 or i >= s for i, s in zip(idx, b.shape)) or not b.mask[idx]:
            raise InvalidArgument(f"point {tuple(k)} at level {j} is not on the grid")
        flat = np.ravel_multi_index(idx, b.shape)
        return b.offset + int(np.count_nonzero(b.mask.ravel()[:flat]))

    def point_at(self, i: int) -> Tuple[int, Triple]:
        if not 0 <= i < self.size:
            raise InvalidArgument(f"offset {i} out of range")
        return int(self.point_levels[i]), tuple(int(v) for v in self.integer_coords[i])

    def summary_rows(self) -> List[Tuple[int, float, str, int]]:
        rows = []
        for b, lv in zip(self.blocks, self.spec.levels):
            box = "x".join(f"Z{n}" for n in lv.half)
            rows.append((b.j, self.scale_a * 2.0 ** -b.j, box, b.count))
        return rows

    def summary(self) -> str:
        lines = [f"{'level':>5} {'spacing/B':>10} {'box':>16} {'points':>9}"]
        for j, h, box, n in self.summary_rows():
            lines.append(f"{j:>5} {h:>10.5g} {box:>16} {n:>9}")
        lines.append(f"{'':>5} {'':>10} {'total':>16} {self.size:>9}")
        return "\n".join(lines)


def _new_point_mask(half: Triple, coarsest: bool) -> np.ndarray:
    shape = tuple(2 * n + 1 for n in half)
    if coarsest:
        return np.ones(shape, dtype=bool)
    odd = [((np.arange(-n, n + 1) & 1) == 1) for n in half]
    return odd[0][:, None, None] | odd[1][None, :, None] | odd[2][None, None, :]


def build_grid(spec) -> MultiGrid:
    """Enumerate the grid points level by level (C order inside a level)."""
    if isinstance(spec, str):
        spec = parse_grid_notation(spec)
    blocks = []
    offset = 0
    for lv in spec.levels:
        coarsest = lv.j == spec.jmin
        mask = _new_point_mask(lv.half, coarsest)
        count = int(mask.sum())
        blocks.append(LevelBlock(
            j=lv.j,
            iota=lv.j if coarsest else lv.j - 1,
            lo=-np.array(lv.half, dtype=np.int64),
            mask=mask,
            offset=offset,
            count=count,
        ))
        offset += count
    if offset == 0:
        raise InvalidArgument("grid is empty")
    grid = MultiGrid(spec=spec, blocks=tuple(blocks), size=offset)
    grid._lookup.update({b.j: b for b in blocks})
    return grid
