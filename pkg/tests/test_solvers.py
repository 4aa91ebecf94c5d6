import numpy as np
import pytest
from scipy.sparse import diags
from scipy.sparse.linalg import aslinearoperator

from ddwave.errors import ConvergenceError, InvalidArgument, UnsupportedFeature
from ddwave.grid3d import build_grid
from ddwave.solvers import (EigenRequest, LinearSolveRequest, arnoldi_smallest, cg, cgnr, gmres,
                            smallest_eigenpairs, solve_linear, transpose_apply)
from ddwave.transform import LinearMap


def laplacian_1d(n):
    return diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).toarray()


def test_diagonal():
    op = aslinearoperator(np.diag(np.arange(1.0, 31.0)))
    res = arnoldi_smallest(op, EigenRequest(nev=2, subspace_dim=10, tol=1e-10))
    assert res.values == pytest.approx([1.0, 2.0], abs=1e-9)
    assert np.all(res.residuals <= 1e-10)


def test_laplacian_against_dense():
    A = laplacian_1d(200)
    res = arnoldi_smallest(aslinearoperator(A), EigenRequest(nev=3, subspace_dim=30, tol=1e-10, max_restarts=3000))
    exact = np.linalg.eigvalsh(A)[:3]
    assert res.values == pytest.approx(exact, rel=1e-8)
    for lam, x, _ in res.pairs():
        assert np.linalg.norm(A @ x - lam * x) <= 1e-9 * np.linalg.norm(A @ x)


def test_symmetric_hessenberg_is_tridiagonal():
    A = laplacian_1d(60)
    res = arnoldi_smallest(aslinearoperator(A), EigenRequest(nev=1, subspace_dim=12, tol=1e-8, max_restarts=2000))
    H = res.hessenberg
    assert np.abs(np.triu(H, 2)).max() < 1e-8 * np.abs(H).max()
    assert np.abs(H - H.T).max() < 1e-8 * np.abs(H).max()


def test_nonsymmetric_real_spectrum():
    rng = np.random.default_rng(4)
    S = np.eye(80) + 0.05 * rng.standard_normal((80, 80))
    D = np.diag(np.linspace(-3, 5, 80))
    A = S @ D @ np.linalg.inv(S)
    res = arnoldi_smallest(aslinearoperator(A), EigenRequest(nev=2, subspace_dim=25, tol=1e-10, max_restarts=2000))
    assert res.values == pytest.approx(np.linspace(-3, 5, 80)[:2], abs=1e-8)


def test_deflation_recovers_degenerate_copies():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((60, 60)))
    lam = np.concatenate([[-1.0, 0.5, 0.5, 0.5], np.linspace(2, 9, 56)])
    A = Q @ np.diag(lam) @ Q.T
    res = smallest_eigenpairs(aslinearoperator(A), EigenRequest(nev=4, subspace_dim=20, tol=1e-10, max_restarts=2000))
    assert res.values == pytest.approx([-1.0, 0.5, 0.5, 0.5], abs=1e-8)
    X = res.vectors[:, 1:]
    assert np.linalg.matrix_rank(X, tol=1e-6) == 3
    assert np.all(res.residuals < 1e-9)


def test_eigen_request_validation():
    with pytest.raises(InvalidArgument):
        EigenRequest(nev=0)
    with pytest.raises(InvalidArgument):
        EigenRequest(nev=5, subspace_dim=6)
    with pytest.raises(ConvergenceError):
        arnoldi_smallest(aslinearoperator(laplacian_1d(400)), EigenRequest(nev=1, subspace_dim=5, max_restarts=2))


def spd(n=120, seed=1):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    return M @ M.T / n + np.eye(n)


def test_identity_solves_immediately():
    b = np.arange(1.0, 11.0)
    for method in ("cg", "cgnr", "gmres"):
        res = solve_linear(aslinearoperator(np.eye(10)), b, LinearSolveRequest(method, tol=1e-12))
        assert np.allclose(res.x, b)
        assert res.iterations <= 1


@pytest.mark.parametrize("solver", [cg, cgnr, gmres])
def test_spd_matches_direct(solver):
    A = spd()
    b = np.random.default_rng(2).standard_normal(len(A))
    res = solver(aslinearoperator(A), b, tol=1e-12, max_iter=5000)
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(res.x - x) <= 1e-10 * np.linalg.norm(x)
    assert res.history[0] == pytest.approx(1.0)
    assert res.residual <= 1e-12


def test_gmres_history_monotone_and_nonsymmetric():
    rng = np.random.default_rng(3)
    A = np.eye(150) * 3 + rng.standard_normal((150, 150)) / np.sqrt(150)
    b = rng.standard_normal(150)
    res = gmres(aslinearoperator(A), b, tol=1e-10, restart=20, max_iter=2000)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-14)
    assert np.linalg.norm(A @ res.x - b) <= 1.01e-10 * np.linalg.norm(b)
    # CGNR reaches the same solution through the normal equations
    res2 = cgnr(aslinearoperator(A), b, tol=1e-10, max_iter=5000)
    assert np.allclose(res.x, res2.x, atol=1e-8)


def test_gmres_reports_failure():
    A = laplacian_1d(300)
    with pytest.raises(ConvergenceError) as exc:
        gmres(aslinearoperator(A), np.ones(300), tol=1e-12, restart=5, max_iter=20)
    assert len(exc.value.history) > 1


def test_linear_request_validation():
    with pytest.raises(InvalidArgument):
        LinearSolveRequest("bicg")
    with pytest.raises(InvalidArgument):
        LinearSolveRequest(tol=0)


def test_transpose_apply_and_log(tmp_path):
    g = build_grid("Z1^3")
    M = np.random.default_rng(5).standard_normal((g.size, g.size)) + 5 * np.eye(g.size)
    op = LinearMap(g, lambda x: M @ x, lambda x: M.T @ x, "M")
    T = transpose_apply(op)
    x = np.arange(g.size, dtype=float)
    assert np.allclose(T.matvec(x), M.T @ x)
    with pytest.raises(UnsupportedFeature):
        transpose_apply(LinearMap(g, lambda x: M @ x))
    log = tmp_path / "res.csv"
    res = solve_linear(op, x, LinearSolveRequest("gmres", 1e-10), log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0] == "method,iter,residual"
    assert len(lines) == len(res.history) + 1


def test_appended_logs_hold_every_solve(tmp_path):
    A = aslinearoperator(spd(40))
    log = tmp_path / "res.csv"
    n = 0
    for k in range(3):
        res = solve_linear(A, np.ones(40) * (k + 1), LinearSolveRequest("gmres", 1e-10), log_path=log, log_append=True)
        n += len(res.history)
    rows = log.read_text().splitlines()
    assert rows[0] == "method,iter,residual"
    assert len(rows) == n + 1
    assert sum(r.split(",")[1] == "0" for r in rows[1:]) == 3
