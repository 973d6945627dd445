"""Splitting solver and svec algebra against closed-form optima."""

import numpy as np
import pytest
import scipy.sparse as sp

from pfropt.conic import (
    BoxBlock,
    ConeProgram,
    FreeBlock,
    PsdBlock,
    cone_distance,
    project_cone,
    project_psd,
    residuals,
    smat,
    solve_admm,
    svec,
    svec_coeff,
    svec_index,
    svec_size,
)


def rand_sym(rng, d):
    M = rng.normal(size=(d, d))
    return 0.5 * (M + M.T)


def no_constraints(n):
    return sp.csc_matrix((0, n)), np.zeros(0)


# ---- svec algebra ----------------------------------------------------------

def test_svec_round_trip_and_isometry():
    rng = np.random.default_rng(1)
    for d in (1, 2, 3, 5, 8):
        M = rand_sym(rng, d)
        v = svec(M)
        assert v.shape == (svec_size(d),)
        assert np.allclose(smat(v, d), M)
        assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(M, "fro"))
        B = rand_sym(rng, d)
        assert np.dot(v, svec(B)) == pytest.approx(np.trace(M @ B))


def test_svec_index_covers_triangle():
    d = 4
    seen = {svec_index(i, j, d) for i in range(d) for j in range(i, d)}
    assert seen == set(range(svec_size(d)))
    assert svec_index(2, 1, d) == svec_index(1, 2, d)


def test_svec_coeff_builds_linear_functionals():
    # a row assembled entrywise must equal trace(C X) for symmetric C
    rng = np.random.default_rng(2)
    d = 4
    C = rand_sym(rng, d)
    X = rand_sym(rng, d)
    row = np.zeros(svec_size(d))
    for i in range(d):
        row[svec_index(i, i, d)] += svec_coeff(i, i, C[i, i])
        for j in range(i + 1, d):
            row[svec_index(i, j, d)] += svec_coeff(i, j, 2.0 * C[i, j])
    assert np.dot(row, svec(X)) == pytest.approx(np.trace(C @ X))


def test_project_psd_eigen_clip():
    rng = np.random.default_rng(3)
    M = rand_sym(rng, 5)
    P = project_psd(M)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    assert np.allclose(project_psd(P), P)
    # Frobenius-nearest among a few PSD candidates
    w, V = np.linalg.eigh(M)
    manual = (V * np.maximum(w, 0.0)) @ V.T
    assert np.allclose(P, manual)
    assert np.allclose(project_psd(-np.eye(3)), 0.0)


def test_project_cone_acts_blockwise():
    prog = ConeProgram(
        blocks=(FreeBlock(2), BoxBlock(np.zeros(2), np.ones(2)), PsdBlock(2)),
        p_diag=np.zeros(7),
        q=np.zeros(7),
        A=sp.csc_matrix((0, 7)),
        b=np.zeros(0),
    )
    neg = svec(np.array([[-1.0, 0.0], [0.0, 2.0]]))
    v = np.concatenate([[-5.0, 7.0], [-0.5, 1.5], neg])
    out = project_cone(prog, v)
    assert out[:2].tolist() == [-5.0, 7.0]
    assert out[2:4].tolist() == [0.0, 1.0]
    assert np.allclose(smat(out[4:], 2), np.diag([0.0, 2.0]))
    assert cone_distance(prog, out) == pytest.approx(0.0, abs=1e-12)
    assert cone_distance(prog, v) > 0.0


def test_program_validation():
    A, b = no_constraints(2)
    with pytest.raises(ValueError):
        ConeProgram((FreeBlock(2),), np.zeros(3), np.zeros(2), A, b)
    with pytest.raises(ValueError):
        ConeProgram((FreeBlock(2),), -np.ones(2), np.zeros(2), A, b)
    with pytest.raises(ValueError):
        BoxBlock(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        ConeProgram(
            (FreeBlock(2),), np.zeros(2), np.zeros(2),
            sp.csc_matrix(np.ones((1, 2))), np.zeros(2),
        )


# ---- solver vs closed forms --------------------------------------------------

def test_box_projection_qp():
    # min .5||x - c||^2 over a box is the clip of c
    c = np.array([3.0, -2.0, 0.4])
    A, b = no_constraints(3)
    prog = ConeProgram(
        (BoxBlock(np.zeros(3), np.ones(3)),), np.ones(3), -c, A, b
    )
    sol = solve_admm(prog, tol=1e-10)
    assert sol.optimal
    assert np.allclose(sol.x, [1.0, 0.0, 0.4], atol=1e-8)
    assert prog.objective(sol.x) == pytest.approx(
        0.5 * sol.x @ sol.x - c @ sol.x
    )


def test_equality_qp_matches_kkt_solve():
    rng = np.random.default_rng(7)
    n, m = 6, 2
    p = rng.uniform(0.5, 3.0, n)
    q = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    prog = ConeProgram(
        (FreeBlock(n),), p, q, sp.csc_matrix(A), b
    )
    sol = solve_admm(prog, tol=1e-11, max_iter=200000)
    K = np.block([[np.diag(p), A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([-q, b]))
    assert sol.optimal
    assert np.allclose(sol.x, ref[:n], atol=1e-7)
    assert np.allclose(sol.nu, ref[n:], atol=1e-6)
    assert np.allclose(sol.y, 0.0, atol=1e-6)  # free block: no cone force


def test_active_box_with_equality():
    # min .5||x||^2 st x1 + x2 = 3, x1 <= 1: optimum pinned at (1, 2)
    prog = ConeProgram(
        (BoxBlock(np.array([0.0, 0.0]), np.array([1.0, 3.0])),),
        np.ones(2), np.zeros(2),
        sp.csc_matrix(np.array([[1.0, 1.0]])), np.array([3.0]),
    )
    sol = solve_admm(prog, tol=1e-10, max_iter=200000)
    assert sol.optimal
    assert np.allclose(sol.x, [1.0, 2.0], atol=1e-8)
    # stationarity: p x + q + A'nu + y = 0
    resid = prog.p_diag * sol.x + prog.q + prog.A.T @ sol.nu + sol.y
    assert np.allclose(resid, 0.0, atol=1e-7)
    assert sol.y[1] == pytest.approx(0.0, abs=1e-7)  # interior coordinate


def test_min_trace_recovers_smallest_eigenvalue():
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    C = Q.T @ np.diag([3.0, 1.0, -2.0]) @ Q
    prog = ConeProgram(
        (PsdBlock(3),), np.zeros(6), svec(C),
        sp.csc_matrix(svec(np.eye(3))[None, :]), np.array([1.0]),
    )
    sol = solve_admm(prog, tol=1e-9, max_iter=200000)
    assert sol.optimal
    assert prog.objective(sol.x) == pytest.approx(-2.0, abs=1e-6)
    X = smat(sol.x, 3)
    v = Q.T[:, 2]  # eigenvector of the -2 eigenvalue
    assert np.allclose(X, np.outer(v, v), atol=1e-5)
    rp, rd, gap = residuals(prog, sol.x, sol.nu, sol.y)
    assert rp < 1e-7 and rd < 1e-7 and abs(gap) < 1e-6


def test_infeasible_program_is_flagged():
    prog = ConeProgram(
        (BoxBlock(np.zeros(2), np.ones(2)),), np.zeros(2), np.zeros(2),
        sp.csc_matrix(np.array([[1.0, 1.0]])), np.array([5.0]),
    )
    sol = solve_admm(prog, tol=1e-8)
    assert sol.status.state == "infeasible"
    assert not sol.optimal


def test_unbounded_program_is_flagged():
    A, b = no_constraints(1)
    prog = ConeProgram((FreeBlock(1),), np.zeros(1), np.ones(1), A, b)
    sol = solve_admm(prog, tol=1e-8)
    assert sol.status.state == "unbounded"
    assert not sol.optimal


def test_iteration_limit_is_honest():
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    C = Q.T @ np.diag([3.0, 1.0, -2.0]) @ Q
    prog = ConeProgram(
        (PsdBlock(3),), np.zeros(6), svec(C),
        sp.csc_matrix(svec(np.eye(3))[None, :]), np.array([1.0]),
    )
    sol = solve_admm(prog, tol=1e-12, max_iter=5)
    assert sol.status.state == "iteration-limit"
    assert sol.status.iterations == 5
    assert not sol.optimal


def test_solver_is_deterministic():
    rng = np.random.default_rng(9)
    n, m = 8, 3
    prog = ConeProgram(
        (BoxBlock(-np.ones(n), np.ones(n)),),
        rng.uniform(0.1, 2.0, n), rng.normal(size=n),
        sp.csc_matrix(rng.normal(size=(m, n))), rng.normal(size=m) * 0.1,
    )
    a = solve_admm(prog, tol=1e-9, max_iter=100000)
    b = solve_admm(prog, tol=1e-9, max_iter=100000)
    assert a.status.iterations == b.status.iterations
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.nu, b.nu)


def test_badly_scaled_constraints_still_solve():
    # powers-of-two equilibration has to absorb a 1e12 row spread
    A = np.array([[1.0e6, 1.0e-6, 3.0], [0.0, 2.0e-6, 1.0]])
    b = np.array([2.0e6, 1.5])
    n, m = 3, 2
    prog = ConeProgram(
        (FreeBlock(n),), np.ones(n), np.zeros(n), sp.csc_matrix(A), b
    )
    sol = solve_admm(prog, tol=1e-11, max_iter=200000)
    K = np.block([[np.eye(n), A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([np.zeros(n), b]))
    assert sol.optimal
    assert np.allclose(sol.x, ref[:n], rtol=1e-6, atol=1e-8)


def test_trace_file_written(tmp_path):
    prog = ConeProgram(
        (BoxBlock(np.zeros(2), np.ones(2)),), np.ones(2),
        np.array([-0.3, -0.9]), *no_constraints(2),
    )
    path = tmp_path / "trace.txt"
    solve_admm(prog, tol=1e-10, trace_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# iter r_prim r_dual rho"
    assert len(lines) >= 2
    first = lines[1].split()
    assert first[0] == "1"
    float(first[1]), float(first[2]), float(first[3])
