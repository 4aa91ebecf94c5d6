"""Krylov methods: implicitly restarted Arnoldi, CG, CGNR and restarted GMRES.

All methods only need ``op.matvec`` (and ``op.rmatvec`` for CGNR), so they
work with :class:`~ddwave.transform.LinearMap` or any scipy ``LinearOperator``.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eig, qr

from .errors import ConvergenceError, InvalidArgument, UnsupportedFeature
from .transform import LinearMap

log = logging.getLogger(__name__)

_REORTH = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------- requests and results

@dataclass(frozen=True)
class EigenRequest:
    nev: int = 1
    subspace_dim: int = 30
    tol: float = 1e-8
    max_restarts: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.nev < 1:
            raise InvalidArgument("nev must be at least 1")
        if self.subspace_dim < self.nev + 2:
            raise InvalidArgument("subspace_dim must be at least nev + 2")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray          # (n, nev)
    residuals: np.ndarray        # ||A x - lambda x|| / ||A x||
    restarts: int
    n_apply: int
    rejected_complex: List[complex] = field(default_factory=list)
    hessenberg: Optional[np.ndarray] = None

    def pairs(self) -> List[Tuple[float, np.ndarray, float]]:
        return [(float(self.values[i]), self.vectors[:, i], float(self.residuals[i]))
                for i in range(len(self.values))]


@dataclass(frozen=True)
class LinearSolveRequest:
    method: str = "gmres"
    tol: float = 1e-8
    max_iter: int = 5000
    restart_len: int = 100

    def __post_init__(self):
        if self.method not in ("cg", "cgnr", "gmres"):
            raise InvalidArgument(f"unknown linear solver {self.method!r}")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")
        if self.restart_len < 1:
            raise InvalidArgument("restart_len must be at least 1")


@dataclass
class SolveResult:
    x: np.ndarray
    history: List[float]         # relative residual per iteration, starting with the initial one
    iterations: int
    n_apply: int
    method: str

    @property
    def residual(self) -> float:
        return self.history[-1]


# ---------------------------------------------------------------- Arnoldi

def _orthogonalize(V: np.ndarray, j: int, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt of ``w`` against rows ``V[:j]`` with one conditional repeat."""
    h = np.zeros(j)
    norm0 = np.linalg.norm(w)
    for i in range(j):
        c = V[i] @ w
        h[i] = c
        w -= c * V[i]
    if np.linalg.norm(w) < _REORTH * norm0:
        for i in range(j):
            c = V[i] @ w
            h[i] += c
            w -= c * V[i]
    return w, h


def _arnoldi_extend(op, V, H, f, k, m):
    """Grow a length-``k`` factorisation ``A V_k = V_k H_k + f e_k^T`` to length ``m``."""
    for j in range(k, m):
        beta = np.linalg.norm(f)
        if j > 0:
            H[j, j - 1] = beta
        if beta == 0.0:
            # invariant subspace: continue with a fresh direction orthogonal to V
            f = np.random.default_rng(j).standard_normal(V.shape[1])
            f, _ = _orthogonalize(V, j, f)
            f, _ = _orthogonalize(V, j, f)
            if j > 0:
                H[j, j - 1] = 0.0
            beta = np.linalg.norm(f)
        V[j] = f / beta
        w = op.matvec(V[j]).astype(float)
        w, h = _orthogonalize(V, j + 1, w)
        H[: j + 1, j] = h
        f = w
    return f


def _shift_qr(H: np.ndarray, shifts: Sequence[complex]) -> Tuple[np.ndarray, np.ndarray]:
    """Apply exact shifts to Hessenberg ``H``; complex conjugate pairs as one real double step."""
    m = H.shape[0]
    Q = np.eye(m)
    i = 0
    shifts = list(shifts)
    while i < len(shifts):
        mu = shifts[i]
        if abs(mu.imag) > 0:
            M = H @ H - 2.0 * mu.real * H + (abs(mu) ** 2) * np.eye(m)
            i += 2   # its conjugate is next in the list
        else:
            M = H - mu.real * np.eye(m)
            i += 1
        q, _ = qr(M)
        H = q.T @ H @ q
        H = np.triu(H, -1)
        Q = Q @ q
    return H, Q


def _order_shifts(vals: np.ndarray) -> List[complex]:
    """Group conjugate pairs next to each other."""
    out, used = [], np.zeros(len(vals), dtype=bool)
    for i, v in enumerate(vals):
        if used[i]:
            continue
        used[i] = True
        out.append(complex(v))
        if abs(v.imag) > 0:
            cand = [k for k in range(len(vals)) if not used[k] and abs(vals[k] - np.conj(v)) <= 1e-10 * max(1.0, abs(v))]
            if cand:
                used[cand[0]] = True
                out.append(complex(np.conj(v)))
            else:
                # lone complex value: shift by its real part only
                out[-1] = complex(v.real, 0.0)
    return out


def arnoldi_smallest(op, req: EigenRequest = EigenRequest(), v0: Optional[np.ndarray] = None) -> EigenResult:
    """Eigenpairs with the smallest real parts by implicitly restarted Arnoldi.

    Unwanted Ritz values are used as exact shifts. Returned pairs satisfy
    ``||A x - lambda x|| <= tol ||A x||`` (checked with one extra apply each).
    Complex Ritz values among the wanted ones are dropped and listed in
    ``rejected_complex``.
    """
    n = op.shape[0]
    nev = req.nev
    m = min(req.subspace_dim, n)
    if m < nev + 1:
        raise InvalidArgument("operator too small for the requested subspace")
    counter = [0]

    class _Counted:
        shape = op.shape

        @staticmethod
        def matvec(x):
            counter[0] += 1
            return np.asarray(op.matvec(x), dtype=float).ravel()

    A = _Counted()
    rng = np.random.default_rng(req.seed)
    start = rng.standard_normal(n)
    if v0 is not None:
        v0 = np.asarray(v0, dtype=float).ravel()
        # a little noise keeps the start vector from being an exact eigenvector of a symmetry subspace
        start = v0 / np.linalg.norm(v0) + 1e-4 * start / np.linalg.norm(start)
    V = np.zeros((m, n))
    H = np.zeros((m, m))
    f = start / np.linalg.norm(start)
    # first vector: V[0] = f, built by extending from k = 0
    f = _arnoldi_extend(A, V, H, f, 0, m)

    best = None
    for restart in range(req.max_restarts + 1):
        vals, vecs = eig(H)
        order = np.lexsort((np.abs(vals.imag), vals.real))
        vals, vecs = vals[order], vecs[:, order]
        beta = np.linalg.norm(f)
        est = beta * np.abs(vecs[-1, :]) / np.maximum(np.linalg.norm(vecs, axis=0), 1e-300)
        scale = np.maximum(np.abs(vals), 1e-300)
        is_real = np.abs(vals.imag) <= 1e-10 * np.maximum(scale, 1.0)
        # the wanted window runs until it holds nev real Ritz values
        nwant = min(int(np.searchsorted(np.cumsum(is_real), nev)) + 1, m - 2)
        target = np.nonzero(is_real[:nwant])[0]
        rel = est[target] / scale[target]
        if best is None or np.max(rel) < np.max(best):
            best = rel.copy()
        if len(target) == nev and np.all(rel <= req.tol):
            result = _extract(A, V, vals, vecs, nev, req.tol, restart, counter, H)
            if result is not None:
                return result
            # certificate failed: treat as not converged and keep restarting
        if restart == req.max_restarts:
            break
        nconv = int(np.sum(est[:nwant] <= req.tol * scale[:nwant]))
        k = nwant + min(nconv, (m - nwant) // 2)
        k = max(nwant, min(k, m - 2))
        # keep conjugate pairs on the same side of the split
        if not is_real[k - 1] and not is_real[k] and abs(vals[k] - np.conj(vals[k - 1])) < 1e-10 * max(1, abs(vals[k])):
            k = k + 1 if k < m - 1 else k - 1
        shifts = _order_shifts(vals[k:])
        Hs, Q = _shift_qr(H, shifts)
        fk = V.T @ Q[:, k] * Hs[k, k - 1] + f * Q[m - 1, k - 1]
        V[:k] = Q[:, :k].T @ V
        H[:] = 0.0
        H[:k, :k] = Hs[:k, :k]
        V[k:] = 0.0
        f = _arnoldi_extend(A, V, H, fk, k, m)
        if restart % 50 == 49:
            log.debug("IRAM restart %d, best relative residuals %s", restart + 1, best)
    raise ConvergenceError(f"Arnoldi did not converge in {req.max_restarts} restarts", history=list(best))


def _extract(A, V, vals, vecs, nev, tol, restart, counter, H):
    keep_vals, keep_vecs, keep_res, rejected = [], [], [], []
    for i in range(len(vals)):
        if len(keep_vals) == nev:
            break
        lam = vals[i]
        if abs(lam.imag) > 1e-10 * max(1.0, abs(lam)):
            rejected.append(complex(lam))
            continue
        y = vecs[:, i].real
        x = V.T @ y
        x /= np.linalg.norm(x)
        Ax = A.matvec(x)
        res = np.linalg.norm(Ax - lam.real * x) / max(np.linalg.norm(Ax), 1e-300)
        if res > tol:
            return None
        keep_vals.append(lam.real)
        keep_vecs.append(x)
        keep_res.append(res)
    if len(keep_vals) < nev:
        return None
    for r in rejected:
        log.warning("rejected complex Ritz value %s", r)
    return EigenResult(np.array(keep_vals), np.stack(keep_vecs, axis=1), np.array(keep_res),
                       restart, counter[0], rejected, H.copy())


class _Deflated:
    """``A + sigma Q Q^T`` for an orthonormal Schur basis ``Q`` of ``A``.

    The eigenvalues belonging to ``span Q`` move up by ``sigma``; all others
    stay where they are.
    """

    def __init__(self, op, Q, sigma):
        self.op, self.Q, self.sigma = op, Q, sigma
        self.shape = op.shape

    def matvec(self, x):
        x = np.asarray(x, dtype=float).ravel()
        return np.asarray(self.op.matvec(x), dtype=float).ravel() + self.sigma * (self.Q @ (self.Q.T @ x))


def smallest_eigenpairs(op, req: EigenRequest = EigenRequest(), v0: Optional[np.ndarray] = None,
                        max_checks: Optional[int] = None) -> EigenResult:
    """:func:`arnoldi_smallest` plus a deflated search for missed eigenvalues.

    A Krylov space grown from one vector holds only one direction of an
    exactly degenerate eigenspace, so copies can be skipped. After the first
    run the found pairs are shifted away and the smallest remaining
    eigenvalue is computed; if it lies below the largest one kept, it is
    inserted and the check repeats.
    """
    res = arnoldi_smallest(op, req, v0)
    vals = list(res.values)
    vecs = [res.vectors[:, i] for i in range(len(vals))]
    restarts, napply = res.restarts, res.n_apply
    checks = req.nev if max_checks is None else max_checks
    for it in range(checks):
        X = np.stack(vecs, axis=1)
        Q, Rx = np.linalg.qr(X)
        R = Rx @ np.diag(vals) @ np.linalg.inv(Rx)          # A Q = Q R
        sigma = 10.0 * max(1.0, max(abs(v) for v in vals))
        sub = replace(req, nev=1, seed=req.seed + 1 + it)
        r = arnoldi_smallest(_Deflated(op, Q, sigma), sub)
        restarts += r.restarts
        napply += r.n_apply
        lam = float(r.values[0])
        if lam >= max(vals) - req.tol * max(1.0, abs(lam)):
            break
        y = r.vectors[:, 0]
        z = sigma * np.linalg.solve(R - lam * np.eye(len(vals)), Q.T @ y)
        x = y + Q @ z
        x /= np.linalg.norm(x)
        Ax = np.asarray(op.matvec(x), dtype=float).ravel()
        napply += 1
        resid = np.linalg.norm(Ax - lam * x) / max(np.linalg.norm(Ax), 1e-300)
        if resid > 10 * req.tol:
            raise ConvergenceError(f"deflated eigenvector has residual {resid:.2e}", history=[resid])
        log.info("deflation found a missed eigenvalue %.10f", lam)
        vals.append(lam)
        vecs.append(x)
        order = np.argsort(vals)[: req.nev]
        vals = [vals[i] for i in order]
        vecs = [vecs[i] for i in order]
    X = np.stack(vecs, axis=1)
    resid = np.array([np.linalg.norm(op.matvec(X[:, i]) - vals[i] * X[:, i])
                      / max(np.linalg.norm(op.matvec(X[:, i])), 1e-300) for i in range(len(vals))])
    return EigenResult(np.array(vals), X, resid, restarts, napply + 2 * len(vals),
                       list(res.rejected_complex), res.hessenberg)


# ---------------------------------------------------------------- linear solvers

def _as_vector(b):
    return np.asarray(getattr(b, "values", b), dtype=float).ravel()


def _write_log(path, method, history, append=False):
    if path is None:
        return
    fresh = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(["method", "iter", "residual"])
        for i, r in enumerate(history):
            w.writerow([method, i, repr(float(r))])


def cg(op, b, tol=1e-8, max_iter=5000, x0=None) -> SolveResult:
    """Conjugate gradients for symmetric positive (or negative) definite operators."""
    b = _as_vector(b)
    bn = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bn == 0:
        return SolveResult(np.zeros_like(b), [0.0], 0, 0, "cg")
    napply = 0
    r = b - op.matvec(x) if x0 is not None else b.copy()
    napply += x0 is not None
    p = r.copy()
    rr = r @ r
    hist = [math.sqrt(rr) / bn]
    for it in range(1, max_iter + 1):
        if hist[-1] <= tol:
            return SolveResult(x, hist, it - 1, napply, "cg")
        Ap = op.matvec(p)
        napply += 1
        pAp = p @ Ap
        if pAp == 0:
            raise ConvergenceError("CG breakdown (p^T A p = 0)", hist)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        hist.append(math.sqrt(rr_new) / bn)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if hist[-1] <= tol:
        return SolveResult(x, hist, max_iter, napply, "cg")
    raise ConvergenceError(f"CG did not converge in {max_iter} iterations", hist)


def cgnr(op, b, tol=1e-8, max_iter=5000, x0=None) -> SolveResult:
    """CG on the normal equations ``A^T A x = A^T b``; stops on ``||b - A x|| <= tol ||b||``."""
    b = _as_vector(b)
    bn = np.linalg.norm(b)
    if bn == 0:
        return SolveResult(np.zeros_like(b), [0.0], 0, 0, "cgnr")
    rmatvec = getattr(op, "rmatvec", None)
    if rmatvec is None or (isinstance(op, LinearMap) and not op.has_transpose):
        raise UnsupportedFeature("CGNR needs the transpose of the operator")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    napply = 0
    if x0 is not None:
        r = b - op.matvec(x)
        napply += 1
    else:
        r = b.copy()
    z = rmatvec(r)
    napply += 1
    p = z.copy()
    zz = z @ z
    hist = [np.linalg.norm(r) / bn]
    for it in range(1, max_iter + 1):
        if hist[-1] <= tol:
            return SolveResult(x, hist, it - 1, napply, "cgnr")
        w = op.matvec(p)
        ww = w @ w
        if ww == 0:
            raise ConvergenceError("CGNR breakdown", hist)
        alpha = zz / ww
        x += alpha * p
        r -= alpha * w
        z = rmatvec(r)
        napply += 2
        zz_new = z @ z
        hist.append(np.linalg.norm(r) / bn)
        p = z + (zz_new / zz) * p
        zz = zz_new
    if hist[-1] <= tol:
        return SolveResult(x, hist, max_iter, napply, "cgnr")
    raise ConvergenceError(f"CGNR did not converge in {max_iter} iterations", hist)


def gmres(op, b, tol=1e-8, max_iter=5000, restart=50, x0=None) -> SolveResult:
    """Restarted GMRES with modified Gram-Schmidt and Givens rotations.

    ``history`` holds the relative residual after every inner iteration; the
    entry closing each cycle is replaced by the recomputed true residual.
    """
    b = _as_vector(b)
    bn = np.linalg.norm(b)
    n = len(b)
    if bn == 0:
        return SolveResult(np.zeros_like(b), [0.0], 0, 0, "gmres")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    napply = 0
    total = 0
    hist: List[float] = []
    while True:
        r = b - op.matvec(x) if (x0 is not None or total > 0) else b.copy()
        napply += (x0 is not None or total > 0)
        beta = np.linalg.norm(r)
        rel = beta / bn
        if hist:
            # same iterate as the last estimate: keep the recomputed true value
            hist[-1] = rel
        else:
            hist.append(rel)
        if rel <= tol:
            return SolveResult(x, hist, total, napply, "gmres")
        if total >= max_iter:
            raise ConvergenceError(f"GMRES did not converge in {max_iter} iterations", hist)
        mdim = min(restart, max_iter - total)
        V = np.zeros((mdim + 1, n))
        H = np.zeros((mdim + 1, mdim))
        cs = np.zeros(mdim)
        sn = np.zeros(mdim)
        g = np.zeros(mdim + 1)
        g[0] = beta
        V[0] = r / beta
        used = 0
        for j in range(mdim):
            w = op.matvec(V[j])
            napply += 1
            w, h = _orthogonalize(V, j + 1, w)
            H[: j + 1, j] = h
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                a, c = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * a + sn[i] * c
                H[i + 1, j] = -sn[i] * a + cs[i] * c
            den = math.hypot(H[j, j], H[j + 1, j])
            if den == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j], sn[j] = H[j, j] / den, H[j + 1, j] / den
            H[j, j] = den
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            used = j + 1
            total += 1
            hist.append(abs(g[j + 1]) / bn)
            if hist[-1] <= tol or H[j, j] == 0.0:
                break
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            V[j + 1] = w / nw
        y = np.linalg.solve(np.triu(H[:used, :used]) + np.diag(np.where(np.diag(H[:used, :used]) == 0, 1.0, 0.0)),
                            g[:used])
        x = x + V[:used].T @ y


def solve_linear(op, rhs, req: LinearSolveRequest = LinearSolveRequest(), x0=None,
                 log_path=None, log_append=False) -> SolveResult:
    """Dispatch on ``req.method``; optionally write the residual history as CSV.

    With ``log_append`` the rows go after those of earlier solves; each solve
    starts again at ``iter = 0``.
    """
    if req.method == "cg":
        res = cg(op, rhs, req.tol, req.max_iter, x0)
    elif req.method == "cgnr":
        res = cgnr(op, rhs, req.tol, req.max_iter, x0)
    else:
        res = gmres(op, rhs, req.tol, req.max_iter, req.restart_len, x0)
    _write_log(log_path, req.method, res.history, log_append)
    return res


def transpose_apply(op) -> LinearMap:
    """The transpose of ``op`` as a LinearMap."""
    if isinstance(op, LinearMap):
        if not op.has_transpose:
            raise UnsupportedFeature(f"{op.name} has no transpose")
        return LinearMap(op.grid, op.rmatvec, op.matvec, op.name + "^T")
    raise UnsupportedFeature("transpose_apply needs a LinearMap")
