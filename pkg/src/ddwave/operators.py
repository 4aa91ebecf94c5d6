"""Matrix-free Hamiltonian pieces: Laplacian, local potentials and HGH projectors."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dd_wavelet import FilterTable
from .errors import InvalidArgument, InvalidState, UnsupportedFeature
from .grid3d import MultiGrid
from .potentials import Nucleus, hgh_projector, real_harmonics
from .transform import (
    LinearMap,
    TransformPlan,
    axis_apply,
    level_split,
    multiply_operator,
    sum_maps,
)

log = logging.getLogger(__name__)


def laplacian_axis_factors(ft: FilterTable, tk: np.ndarray, j: int, sk: np.ndarray, js: int,
                           jmin: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """1D second-derivative and overlap factors between a target and a source level.

    The level prefactor ``4**min(iota, iota')`` is folded into the first factor.
    The overlap factor is ``None`` when it is the identity (same level).
    """
    it, tt, lt = level_split(tk, j, jmin)
    isrc, ts, ls = level_split(sk, js, jmin)
    dj = isrc - it
    A = np.zeros((len(tk), len(sk)))
    S = np.zeros((len(tk), len(sk)))
    if dj >= 0:
        pref = 4.0 ** it
        idx = ls[None, :] - (2 ** dj) * lt[:, None]
    else:
        pref = 4.0 ** isrc
        idx = lt[:, None] - (2 ** -dj) * ls[None, :]
    for t1 in (0, 1):
        for t2 in (0, 1):
            sel = (tt[:, None] == t1) & (ts[None, :] == t2)
            if not sel.any():
                continue
            A[sel] = ft.a[(t1, t2, dj)][idx[sel]]
            S[sel] = ft.s[(t1, t2, dj)][idx[sel]]
    if j == js:
        if not np.array_equal(S, np.eye(len(tk))):
            raise InvalidState("same-level overlap factor is not the identity")
        S = None
    return pref * A, S


class LaplacianOp:
    """Sum of the three second-derivative operators in grid units.

    Blocks couple every target level to every source level; each is
    ``Ax Sy Sz + Sx Ay Sz + Sx Sy Az`` applied with seven axis products.
    """

    def __init__(self, grid: MultiGrid, filters: FilterTable, scale_a: Optional[float] = None):
        self.grid = grid
        self.filters = filters
        self.scale_a = grid.scale_a if scale_a is None else scale_a
        span = max((b.iota for b in grid.blocks)) - min((b.iota for b in grid.blocks))
        if filters.jspan < span:
            raise InvalidState(f"filter table spans {filters.jspan} levels, grid needs {span}")
        self.blocks: Dict[Tuple[int, int], Tuple[Tuple[np.ndarray, Optional[np.ndarray]], ...]] = {}
        for b in grid.blocks:
            for bs in grid.blocks:
                self.blocks[(b.j, bs.j)] = tuple(
                    laplacian_axis_factors(filters, b.axis_range(d), b.j, bs.axis_range(d), bs.j, grid.jmin)
                    for d in range(3))

    @staticmethod
    def _block_apply(factors, x, transpose=False):
        (ax, sx), (ay, sy), (az, sz) = factors
        if transpose:
            tr = lambda m: None if m is None else m.T
            ax, sx, ay, sy, az, sz = map(tr, (ax, sx, ay, sy, az, sz))
        t_z = axis_apply(sz, x, 2)
        part_x = axis_apply(ax, axis_apply(sy, t_z, 1), 0)
        inner = axis_apply(ay, t_z, 1) + axis_apply(sy, axis_apply(az, x, 2), 1)
        return part_x + axis_apply(sx, inner, 0)

    def apply_boxes(self, cb: List[np.ndarray], transpose: bool = False) -> List[np.ndarray]:
        g = self.grid
        out = []
        for b in g.blocks:
            acc = np.zeros(b.shape)
            for i2, bs in enumerate(g.blocks):
                if transpose:
                    acc += self._block_apply(self.blocks[(bs.j, b.j)], cb[i2] * bs.mask, True)
                else:
                    acc += self._block_apply(self.blocks[(b.j, bs.j)], cb[i2])
            out.append(acc * b.mask)
        return out

    def apply(self, c: np.ndarray) -> np.ndarray:
        """``L c`` in grid units."""
        return self.grid.gather(self.apply_boxes(self.grid.scatter(c)))

    def apply_t(self, c: np.ndarray) -> np.ndarray:
        return self.grid.gather(self.apply_boxes(self.grid.scatter(c), transpose=True))

    def as_map(self, scale: float = 1.0, name: str = "L") -> LinearMap:
        return LinearMap(self.grid, lambda c: scale * self.apply(c), lambda c: scale * self.apply_t(c), name)

    def dense(self) -> np.ndarray:
        n = self.grid.size
        out = np.empty((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            out[:, i] = self.apply(e)
            e[i] = 0.0
        return out


def kinetic(op: LaplacianOp) -> LinearMap:
    """``-1/2 nabla^2`` in Bohr: the grid-unit Laplacian divided by ``scale_a**2``."""
    return op.as_map(-0.5 / op.scale_a ** 2, "T")


def potential_values(pot: Callable[[np.ndarray], np.ndarray], grid: MultiGrid,
                     scale_a: Optional[float] = None) -> np.ndarray:
    a = grid.scale_a if scale_a is None else scale_a
    pts = grid.coords * a
    d = np.asarray(pot(pts), dtype=float)
    if d.shape == ():
        d = np.full(grid.size, float(d))
    bad = np.nonzero(~np.isfinite(d))[0]
    if len(bad):
        raise InvalidArgument(f"potential is not finite at grid point {tuple(pts[bad[0]])} Bohr")
    return d


def local_potential(plan: TransformPlan, pot, grid: Optional[MultiGrid] = None,
                    scale_a: Optional[float] = None) -> LinearMap:
    """Multiplication by ``pot`` (callable on (N, 3) Bohr positions, or point values)."""
    grid = plan.grid if grid is None else grid
    if grid is not plan.grid:
        raise InvalidArgument("plan and grid differ")
    d = potential_values(pot, grid, scale_a) if callable(pot) else np.asarray(pot, dtype=float)
    return multiply_operator(plan, d, "V")


@dataclass
class _Projector:
    values: np.ndarray      # p_i(r) Y_m(r) at every grid point
    weighted: np.ndarray    # the same, times quadrature weights


class HghNonlocalOp:
    """Separable HGH projectors acting on point values.

    ``f -> sum_{l,m,i,j} P_{lmi} h^l_ij <P_{lmj}, f>`` with the bra evaluated
    by the exact integral of the interpolant (weights ``q``) and the result
    returned as point values, so it fuses with local potentials.
    """

    def __init__(self, plan: TransformPlan, nuclei: Sequence[Nucleus], scale_a: Optional[float] = None):
        self.plan = plan
        grid = plan.grid
        a = grid.scale_a if scale_a is None else scale_a
        q = plan.quadrature_weights
        pts = grid.coords * a
        self.terms: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []   # (P, Pq, h)
        for nuc in nuclei:
            if nuc.kind != "hgh":
                continue
            rel = pts - np.asarray(nuc.R)
            r = np.linalg.norm(rel, axis=1)
            for ch in nuc.hgh.channels:
                if ch.l > 1:
                    raise UnsupportedFeature(f"HGH channels with l > 1 are not supported (got l={ch.l})")
                k = ch.nproj
                if k == 0:
                    continue
                radial = [hgh_projector(ch.l, i + 1, ch.r, r) for i in range(k)]
                ylm = real_harmonics(ch.l, rel)
                self._check_support(nuc, ch, grid, a)
                for y in ylm:
                    P = np.stack([rad * y for rad in radial])          # (k, N)
                    self.terms.append((P, P * q, ch.h[:k, :k]))

    @staticmethod
    def _check_support(nuc, ch, grid, a):
        reach = 6.0 * ch.r
        lo = grid.blocks[0].lo * 2.0 ** -grid.jmin * a
        hi = grid.blocks[0].hi * 2.0 ** -grid.jmin * a
        R = np.asarray(nuc.R)
        if np.any(R - reach < lo) or np.any(R + reach > hi):
            log.warning("HGH projector l=%d at %s is truncated by the grid boundary", ch.l, nuc.R)

    @property
    def empty(self) -> bool:
        return not self.terms

    def apply_points(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        for P, Pq, h in self.terms:
            out += (h @ (Pq @ v)) @ P
        return out

    def apply_points_t(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        for P, Pq, h in self.terms:
            out += (h.T @ (P @ v)) @ Pq
        return out

    def as_map(self) -> LinearMap:
        plan = self.plan
        return LinearMap(plan.grid,
                         lambda c: plan.forward(self.apply_points(plan.backward(c))),
                         lambda y: plan.backward_t(self.apply_points_t(plan.forward_t(y))),
                         "Vnl")

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """``<f, V_nl g>`` with both functions as point values."""
        return float(self.plan.quadrature_weights @ (f * self.apply_points(g)))


def hamiltonian(kin: LinearMap, locals: Sequence[LinearMap] = (), nonlocals: Sequence[LinearMap] = ()) -> LinearMap:
    """Plain sum of operator pieces."""
    return sum_maps(kin.grid, [kin, *locals, *nonlocals], "H")


class FusedHamiltonian:
    """``H c = T c + U (d * W c + V_nl(W c))`` with one transform pair per apply.

    ``d`` (point values of all local potentials) can be swapped between SCF
    iterations without rebuilding anything else.
    """

    def __init__(self, lap: LaplacianOp, plan: TransformPlan, d: Optional[np.ndarray] = None,
                 nonlocal_op: Optional[HghNonlocalOp] = None):
        if lap.grid is not plan.grid:
            raise InvalidArgument("Laplacian and transform plan live on different grids")
        self.lap = lap
        self.plan = plan
        self.grid = plan.grid
        self.kscale = -0.5 / lap.scale_a ** 2
        self.d = np.zeros(self.grid.size) if d is None else np.asarray(d, dtype=float)
        self.nonlocal_op = nonlocal_op if (nonlocal_op is not None and not nonlocal_op.empty) else None

    def with_potential(self, d: np.ndarray) -> "FusedHamiltonian":
        return FusedHamiltonian(self.lap, self.plan, d, self.nonlocal_op)

    def point_part(self, v: np.ndarray) -> np.ndarray:
        out = self.d * v
        if self.nonlocal_op is not None:
            out += self.nonlocal_op.apply_points(v)
        return out

    def point_part_t(self, v: np.ndarray) -> np.ndarray:
        out = self.d * v
        if self.nonlocal_op is not None:
            out += self.nonlocal_op.apply_points_t(v)
        return out

    def apply(self, c: np.ndarray) -> np.ndarray:
        g = self.grid
        cb = g.scatter(c)
        kin = self.lap.apply_boxes(cb)
        v = g.gather(self.plan.backward_boxes(cb))
        pot = self.plan.forward(self.point_part(v))
        return self.kscale * g.gather(kin) + pot

    def apply_t(self, y: np.ndarray) -> np.ndarray:
        kin = self.lap.apply_t(y)
        pot = self.plan.backward_t(self.point_part_t(self.plan.forward_t(y)))
        return self.kscale * kin + pot

    def as_map(self) -> LinearMap:
        return LinearMap(self.grid, self.apply, self.apply_t, "H")
