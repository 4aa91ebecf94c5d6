"""Forward and backward transforms between point values and expansion coefficients.

Every operator here is a sum of blocks coupling a target level to a source
level. A block is a Kronecker product of three dense 1D matrices acting on the
full level boxes; points missing from a level (the inherited, all-even ones)
are held at zero on input and masked on output.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .dd_wavelet import FilterTable, build_filter_table, cascade_table, make_family
from .errors import InvalidArgument
from .grid3d import MultiGrid

COEFFICIENTS = "coefficients"
POINT_VALUES = "point-values"


# ---------------------------------------------------------------- containers

@dataclass
class CoefficientField:
    """A vector on a grid tagged with what it represents."""

    grid: MultiGrid
    values: np.ndarray
    kind: str = COEFFICIENTS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise InvalidArgument(f"field length {self.values.shape} does not match grid size {self.grid.size}")
        if self.kind not in (COEFFICIENTS, POINT_VALUES):
            raise InvalidArgument(f"unknown field kind {self.kind!r}")

    def require(self, kind: str) -> np.ndarray:
        if self.kind != kind:
            raise InvalidArgument(f"expected {kind}, got {self.kind}")
        return self.values


class LinearMap(LinearOperator):
    """Matrix-free real operator on one grid, usable anywhere scipy expects a LinearOperator."""

    def __init__(self, grid: MultiGrid, matvec: Callable, rmatvec: Optional[Callable] = None,
                 name: str = "op"):
        super().__init__(dtype=np.float64, shape=(grid.size, grid.size))
        self.grid = grid
        self._mv = matvec
        self._rmv = rmatvec
        self.name = name
        self.n_apply = 0

    def _matvec(self, x):
        self.n_apply += 1
        return self._mv(np.asarray(x, dtype=float).ravel())

    def _rmatvec(self, x):
        if self._rmv is None:
            raise NotImplementedError(f"{self.name} has no transpose")
        return self._rmv(np.asarray(x, dtype=float).ravel())

    @property
    def has_transpose(self) -> bool:
        return self._rmv is not None

    def __call__(self, x):
        if isinstance(x, CoefficientField):
            if x.grid is not self.grid:
                raise InvalidArgument("operator and field live on different grids")
            return CoefficientField(self.grid, self.matvec(x.values), x.kind)
        return self.matvec(x)

    def __repr__(self):
        return f"<LinearMap {self.name} n={self.shape[0]}>"


def sum_maps(grid: MultiGrid, parts: Sequence[LinearMap], name="sum") -> LinearMap:
    for p in parts:
        if getattr(p, "grid", grid) is not grid:
            raise InvalidArgument("operators live on different grids")
    parts = list(parts)

    def mv(x):
        out = np.zeros(grid.size)
        for p in parts:
            out += p.matvec(x)
        return out

    def rmv(x):
        out = np.zeros(grid.size)
        for p in parts:
            out += p.rmatvec(x)
        return out

    has_t = all(getattr(p, "has_transpose", True) for p in parts)
    return LinearMap(grid, mv, rmv if has_t else None, name)


# ---------------------------------------------------------------- kronecker blocks

Factors = Tuple[Optional[np.ndarray], Optional[np.ndarray], Optional[np.ndarray]]


def kron_apply(factors: Factors, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``(Fx (x) Fy (x) Fz) x`` on a 3D box; ``None`` factors are identities."""
    fx, fy, fz = factors
    if transpose:
        fx = None if fx is None else fx.T
        fy = None if fy is None else fy.T
        fz = None if fz is None else fz.T
    y = x
    if fz is not None:
        y = y @ fz.T
    if fy is not None:
        y = np.matmul(fy, y)
    if fx is not None:
        n = y.shape[0]
        y = (fx @ y.reshape(n, -1)).reshape((fx.shape[0],) + y.shape[1:])
    return y


def axis_apply(f: Optional[np.ndarray], x: np.ndarray, axis: int) -> np.ndarray:
    if f is None:
        return x
    if axis == 2:
        return x @ f.T
    if axis == 1:
        return np.matmul(f, x)
    n = x.shape[0]
    return (f @ x.reshape(n, -1)).reshape((f.shape[0],) + x.shape[1:])


def level_split(k: np.ndarray, j: int, jmin: int):
    """``(iota, t, l)`` per 1D integer coordinate ``k`` at level ``j``."""
    if j == jmin:
        return j, np.zeros_like(k), k.copy()
    return j - 1, k & 1, k >> 1


def sample_matrix(ft: FilterTable, tk: np.ndarray, j: int, sk: np.ndarray, js: int, jmin: int) -> np.ndarray:
    """1D factor of basis functions of level ``js`` sampled at ``tk / 2**j``.

    Valid for ``j >= iota_s``; the entry is ``s(0, t', iota' - j, k - 2**(j - iota') l')``.
    """
    iota_s, ts, ls = level_split(sk, js, jmin)
    if iota_s > j:
        raise InvalidArgument("sampling a finer level on a coarser lattice")
    out = np.zeros((len(tk), len(sk)))
    step = 2 ** (j - iota_s)
    for c in range(len(sk)):
        filt = ft.s[(0, int(ts[c]), iota_s - j)]
        out[:, c] = filt[tk - step * ls[c]]
    return out


def dual_matrix(ft: FilterTable, k: np.ndarray, j: int, jmin: int) -> np.ndarray:
    """1D inverse of the same-level sample matrix (``j > jmin``).

    Entry ``s(t, 0, 1, k' - 2 l)``: the dual of the target function paired with
    ``phi_{j,k'}``.
    """
    _, t, l = level_split(k, j, jmin)
    out = np.zeros((len(k), len(k)))
    for r in range(len(k)):
        out[r] = ft.s[(int(t[r]), 0, 1)][k - 2 * l[r]]
    return out


def _box_coords(grid: MultiGrid):
    return {b.j: [b.axis_range(d) for d in range(3)] for b in grid.blocks}


# ---------------------------------------------------------------- the plan

class TransformPlan:
    """Precomputed 1D factors for ``W`` (coefficients to point values) and ``U = W^-1``."""

    def __init__(self, grid: MultiGrid, order: int = 8, filters: Optional[FilterTable] = None):
        self.grid = grid
        self.family = make_family(order)
        span = grid.jmax - grid.jmin + 1
        if filters is None or filters.jspan < span:
            filters = build_filter_table(self.family, span)
        self.filters = filters
        coords = _box_coords(grid)
        jmin = grid.jmin
        self.blocks: Dict[Tuple[int, int], Factors] = {}
        for b in grid.blocks:
            for bs in grid.blocks:
                if bs.j > b.j:
                    continue
                if b.j == bs.j == jmin:
                    continue  # identity
                self.blocks[(b.j, bs.j)] = tuple(
                    sample_matrix(filters, coords[b.j][d], b.j, coords[bs.j][d], bs.j, jmin)
                    for d in range(3))
        self.jblocks: Dict[int, Factors] = {
            b.j: tuple(dual_matrix(filters, coords[b.j][d], b.j, jmin) for d in range(3))
            for b in grid.blocks if b.j > jmin}

    @property
    def levels(self) -> List[int]:
        return [b.j for b in self.grid.blocks]

    # -- box-space kernels

    def _masked(self, boxes):
        return [x * b.mask for x, b in zip(boxes, self.grid.blocks)]

    def backward_boxes(self, cb: List[np.ndarray]) -> List[np.ndarray]:
        g = self.grid
        out = []
        for i, b in enumerate(g.blocks):
            acc = cb[i].copy() if b.j == g.jmin else np.zeros(b.shape)
            for i2, bs in enumerate(g.blocks[: i + 1]):
                key = (b.j, bs.j)
                if key in self.blocks:
                    acc += kron_apply(self.blocks[key], cb[i2])
            out.append(acc * b.mask)
        return out

    def backward_t_boxes(self, vb: List[np.ndarray]) -> List[np.ndarray]:
        g = self.grid
        vb = self._masked(vb)
        out = []
        for i2, bs in enumerate(g.blocks):
            acc = vb[i2].copy() if bs.j == g.jmin else np.zeros(bs.shape)
            for i in range(i2, len(g.blocks)):
                key = (g.blocks[i].j, bs.j)
                if key in self.blocks:
                    acc += kron_apply(self.blocks[key], vb[i], transpose=True)
            out.append(acc * bs.mask)
        return out

    def forward_boxes(self, vb: List[np.ndarray]) -> List[np.ndarray]:
        g = self.grid
        out = []
        for i, b in enumerate(g.blocks):
            if b.j == g.jmin:
                out.append(vb[i] * b.mask)
                continue
            r = vb[i] * b.mask
            for i2 in range(i):
                r = r - kron_apply(self.blocks[(b.j, g.blocks[i2].j)], out[i2])
            out.append(kron_apply(self.jblocks[b.j], r * b.mask) * b.mask)
        return out

    def forward_t_boxes(self, yb: List[np.ndarray]) -> List[np.ndarray]:
        g = self.grid
        ybar = [y * b.mask for y, b in zip(yb, g.blocks)]
        vbar = [None] * len(g.blocks)
        for i in range(len(g.blocks) - 1, -1, -1):
            b = g.blocks[i]
            if b.j == g.jmin:
                vbar[i] = ybar[i]
                continue
            rbar = kron_apply(self.jblocks[b.j], ybar[i], transpose=True) * b.mask
            vbar[i] = rbar
            for i2 in range(i):
                ybar[i2] = ybar[i2] - kron_apply(self.blocks[(b.j, g.blocks[i2].j)], rbar,
                                                 transpose=True) * g.blocks[i2].mask
        return vbar

    # -- vector interface

    def _run(self, kernel, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.grid.size,):
            raise InvalidArgument(f"vector length {x.shape} does not match grid size {self.grid.size}")
        return self.grid.gather(kernel(self.grid.scatter(x)))

    def backward(self, c):
        """Point values ``v_alpha = sum_beta c_beta zeta_beta(alpha)``."""
        if isinstance(c, CoefficientField):
            self._check(c)
            return CoefficientField(self.grid, self._run(self.backward_boxes, c.require(COEFFICIENTS)),
                                    POINT_VALUES)
        return self._run(self.backward_boxes, c)

    def forward(self, v):
        """Expansion coefficients of the interpolant of point values ``v``."""
        if isinstance(v, CoefficientField):
            self._check(v)
            return CoefficientField(self.grid, self._run(self.forward_boxes, v.require(POINT_VALUES)),
                                    COEFFICIENTS)
        return self._run(self.forward_boxes, v)

    def backward_t(self, v):
        return self._run(self.backward_t_boxes, v)

    def forward_t(self, c):
        return self._run(self.forward_t_boxes, c)

    def _check(self, f: CoefficientField):
        if f.grid is not self.grid:
            raise InvalidArgument("field belongs to a different grid")

    # -- integrals

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        """``int zeta_alpha`` in grid units (each 1D factor integrates to ``2**-(iota + t)``)."""
        iota, t, _ = self.grid.decomposition()
        return np.prod(2.0 ** -(iota[:, None] + t), axis=1)

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        """Weights ``q`` with ``sum_alpha q_alpha f(alpha)`` = integral of the interpolant (Bohr^3)."""
        return self.grid.scale_a ** 3 * self.forward_t(self.basis_integrals)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.quadrature_weights @ values)

    # -- dense oracles (tests, tiny grids)

    def dense(self, which: str = "backward") -> np.ndarray:
        fn = {"backward": self.backward, "forward": self.forward,
              "backward_t": self.backward_t, "forward_t": self.forward_t}[which]
        n = self.grid.size
        out = np.empty((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            out[:, i] = fn(e)
            e[i] = 0.0
        return out

    # -- operators

    def backward_map(self) -> LinearMap:
        return LinearMap(self.grid, self.backward, self.backward_t, "W")

    def forward_map(self) -> LinearMap:
        return LinearMap(self.grid, self.forward, self.forward_t, "U")

    # -- evaluation away from grid points

    def evaluate(self, c: np.ndarray, points: np.ndarray, depth: int = 12) -> np.ndarray:
        """Evaluate the expansion ``sum c_alpha zeta_alpha`` at arbitrary points (grid units)."""
        return OffGridEvaluator(self, depth).evaluate(c, points)


def multiply_operator(plan: TransformPlan, d: np.ndarray, name: str = "M") -> LinearMap:
    """``c -> U diag(d) W c``: multiplication by a function given by its point values."""
    d = np.asarray(d, dtype=float)
    if d.shape != (plan.grid.size,):
        raise InvalidArgument(f"potential length {d.shape} does not match grid size {plan.grid.size}")

    def mv(c):
        return plan.forward(d * plan.backward(c))

    def rmv(y):
        return plan.backward_t(d * plan.forward_t(y))

    return LinearMap(plan.grid, mv, rmv, name)


class OffGridEvaluator:
    """Evaluate an expansion anywhere inside the region its basis functions cover.

    For each level the expansion restricted to levels ``<= j`` is a single-level
    sum ``sum_k A_j[k] phi(2**j x - k)`` with ``A_j`` the cumulative samples on
    the level-``j`` lattice. A point is evaluated with the finest level whose
    functions can reach it, so finer levels contribute nothing there.
    """

    def __init__(self, plan: TransformPlan, depth: int = 12):
        self.plan = plan
        self.depth = depth
        fam = plan.family
        self.m = fam.m
        self.table = cascade_table(fam, depth)
        g = plan.grid
        coords = _box_coords(g)
        self.lattices = {}
        for b in g.blocks:
            pad = 3 * self.m + 1
            lat = [np.arange(b.lo[d] - pad, b.hi[d] + pad + 1) for d in range(3)]
            facs = {}
            for bs in g.blocks:
                if bs.j > b.j:
                    continue
                facs[bs.j] = tuple(sample_matrix(plan.filters, lat[d], b.j, coords[bs.j][d], bs.j, g.jmin)
                                   for d in range(3))
            self.lattices[b.j] = (lat, facs)

    def _phi(self, x: np.ndarray) -> np.ndarray:
        scale = 2 ** self.depth
        pos = x * scale
        i0 = np.floor(pos).astype(np.int64)
        frac = pos - i0
        return (1 - frac) * self.table[i0] + frac * self.table[i0 + 1]

    def evaluate(self, c: np.ndarray, points: np.ndarray) -> np.ndarray:
        g = self.plan.grid
        cb = g.scatter(np.asarray(c, dtype=float))
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(points))
        owner = np.full(len(points), g.jmin)
        for b in g.blocks:
            reach = (b.hi + 2 * self.m) * 2.0 ** -b.j
            lo = (b.lo - 2 * self.m) * 2.0 ** -b.j
            inside = np.all((points >= lo) & (points <= reach), axis=1)
            owner[inside] = b.j
        for i, b in enumerate(g.blocks):
            sel = np.nonzero(owner == b.j)[0]
            if len(sel) == 0:
                continue
            lat, facs = self.lattices[b.j]
            A = np.zeros(tuple(len(a) for a in lat))
            for i2, bs in enumerate(g.blocks[: i + 1]):
                A += kron_apply(facs[bs.j], cb[i2])
            y = points[sel] * 2.0 ** b.j
            base = [lat[d][0] for d in range(3)]
            for n, p in zip(sel, y):
                ranges = []
                weights = []
                for d in range(3):
                    ks = np.arange(int(np.ceil(p[d] - self.m)), int(np.floor(p[d] + self.m)) + 1)
                    ks = ks[(ks >= lat[d][0]) & (ks <= lat[d][-1])]
                    ranges.append(ks - base[d])
                    weights.append(self._phi(p[d] - ks))
                if any(len(r) == 0 for r in ranges):
                    continue
                sub = A[np.ix_(*ranges)]
                out[n] = np.einsum("abc,a,b,c->", sub, *weights)
        return out
