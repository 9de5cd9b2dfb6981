import itertools

import numpy as np
import pytest

from bipedmhe.qp import (
    QpError,
    QpProblem,
    QpSettings,
    dump_qp_problem,
    kkt_residuals,
    load_qp_problem,
    solve_qp,
)


def active_set_oracle(prob):
    """Dense global solve by enumerating every candidate active set."""
    n = prob.n
    H, c = prob.H.toarray(), prob.c
    Ae, be = prob.A_eq.toarray(), prob.b_eq
    Ai, bi = prob.A_in.toarray(), prob.b_in
    best = None
    for k in range(len(bi) + 1):
        for subset in itertools.combinations(range(len(bi)), k):
            sel = list(subset)
            if len(be) + len(sel) > n:
                continue
            A = np.vstack([Ae, Ai[sel]])
            b = np.concatenate([be, bi[sel]])
            ma = A.shape[0]
            K = np.block([[H, A.T], [A, np.zeros((ma, ma))]])
            rhs = np.concatenate([-c, b])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.abs(K @ sol - rhs).max() > 1e-7 * max(1.0, np.abs(sol).max()):
                continue  # singular active set, solve produced garbage
            x = sol[:n]
            mu = sol[n + len(be):]
            if len(bi) and np.any(Ai @ x - bi > 1e-9):
                continue
            if np.any(mu < -1e-9):
                continue
            obj = 0.5 * x @ H @ x + c @ x
            if best is None or obj < best[1]:
                best = (x, obj)
    assert best is not None, "oracle found no KKT point"
    return best[0]


def random_qp(rng, n, m_eq, m_in):
    R = rng.normal(size=(n, n))
    H = R.T @ R + n * np.eye(n)
    c = 2.0 * rng.normal(size=n)
    x_feas = rng.normal(size=n)
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    b_eq = A_eq @ x_feas
    b_in = A_in @ x_feas + rng.uniform(0.0, 1.0, size=m_in)
    return QpProblem(H, c, A_eq, b_eq, A_in, b_in)


def test_unconstrained_quadratic():
    # min ||x - 1||^2
    sol = solve_qp(QpProblem(2.0 * np.eye(3), -2.0 * np.ones(3)))
    assert sol.status == "solved"
    np.testing.assert_allclose(sol.x, np.ones(3), atol=1e-8)


def test_single_active_bound():
    # min x^2 s.t. x >= 1  ->  x* = 1, mu* = 2
    prob = QpProblem(np.array([[2.0]]), np.zeros(1),
                     A_in=np.array([[-1.0]]), b_in=np.array([-1.0]))
    sol = solve_qp(prob)
    assert sol.status == "solved"
    np.testing.assert_allclose(sol.x, [1.0], atol=1e-8)
    np.testing.assert_allclose(sol.y_in, [2.0], atol=1e-6)


def test_matches_active_set_oracle():
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(2, 9))
        m_eq = int(rng.integers(0, min(3, n)))
        m_in = int(rng.integers(0, 7))
        prob = random_qp(rng, n, m_eq, m_in)
        sol = solve_qp(prob)
        assert sol.status == "solved", f"trial {trial} not solved"
        x_ref = active_set_oracle(prob)
        np.testing.assert_allclose(sol.x, x_ref, atol=1e-6,
                                   err_msg=f"trial {trial}")


def test_kkt_conditions_hold():
    rng = np.random.default_rng(11)
    for _ in range(10):
        prob = random_qp(rng, 10, 2, 5)
        sol = solve_qp(prob)
        assert sol.status == "solved"
        res = kkt_residuals(prob, sol.x, sol.y_eq, sol.y_in)
        assert res["stationarity"] <= 1e-6
        assert res["primal_eq"] <= 1e-6
        assert res["primal_in"] <= 1e-6
        assert res["comp_slack"] <= 1e-6
        assert sol.y_in.min(initial=0.0) >= 0.0


def test_equality_only_matches_direct_kkt():
    rng = np.random.default_rng(3)
    prob = random_qp(rng, 12, 4, 0)
    sol = solve_qp(prob)
    H = prob.H.toarray()
    A = prob.A_eq.toarray()
    K = np.block([[H, A.T], [A, np.zeros((4, 4))]])
    direct = np.linalg.solve(K, np.concatenate([-prob.c, prob.b_eq]))
    np.testing.assert_allclose(sol.x, direct[:12], atol=1e-8)


def test_row_scaling_invariance():
    rng = np.random.default_rng(19)
    prob = random_qp(rng, 8, 2, 5)
    sol_a = solve_qp(prob)
    se = rng.uniform(0.05, 20.0, size=2)
    si = rng.uniform(0.05, 20.0, size=5)
    scaled = QpProblem(prob.H, prob.c,
                       np.diag(se) @ prob.A_eq.toarray(), se * prob.b_eq,
                       np.diag(si) @ prob.A_in.toarray(), si * prob.b_in)
    sol_b = solve_qp(scaled)
    np.testing.assert_allclose(sol_a.x, sol_b.x, atol=1e-6)


def test_variable_permutation_invariance():
    rng = np.random.default_rng(23)
    prob = random_qp(rng, 9, 2, 4)
    perm = rng.permutation(9)
    permuted = QpProblem(prob.H.toarray()[np.ix_(perm, perm)], prob.c[perm],
                         prob.A_eq.toarray()[:, perm], prob.b_eq,
                         prob.A_in.toarray()[:, perm], prob.b_in)
    sol = solve_qp(prob)
    sol_p = solve_qp(permuted)
    np.testing.assert_allclose(sol_p.x, sol.x[perm], atol=1e-6)


def test_warm_start_resolve_is_immediate():
    rng = np.random.default_rng(29)
    prob = random_qp(rng, 15, 3, 8)
    sol = solve_qp(prob)
    assert sol.status == "solved"
    warm = solve_qp(prob, x0=sol.x, y0=np.concatenate([sol.y_eq, sol.y_in]))
    assert warm.status == "solved"
    assert warm.iterations <= 5
    np.testing.assert_allclose(warm.x, sol.x, atol=1e-6)


def test_primal_infeasible_detected():
    # x = 0 and x = 1 simultaneously
    prob = QpProblem(np.eye(1), np.zeros(1),
                     A_eq=np.array([[1.0], [1.0]]), b_eq=np.array([0.0, 1.0]))
    sol = solve_qp(prob)
    assert sol.status == "infeasible"


def test_unbounded_detected():
    # min -x s.t. x >= 0
    prob = QpProblem(np.zeros((1, 1)), np.array([-1.0]),
                     A_in=np.array([[-1.0]]), b_in=np.array([0.0]))
    sol = solve_qp(prob)
    assert sol.status == "infeasible"


def test_iteration_cap_reported():
    rng = np.random.default_rng(31)
    prob = random_qp(rng, 10, 2, 5)
    sol = solve_qp(prob, QpSettings(max_iter=2, adaptive_rho=False))
    assert sol.status == "max_iter"
    assert sol.iterations == 2
    assert np.all(np.isfinite(sol.x))


def test_problem_validation():
    with pytest.raises(QpError):
        QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(QpError):
        QpProblem(-np.eye(2), np.zeros(2))
    with pytest.raises(QpError):
        QpProblem(np.eye(2), np.zeros(2), A_eq=np.ones((1, 3)),
                  b_eq=np.ones(1))
    with pytest.raises(QpError):
        QpProblem(np.eye(2), np.zeros(2), A_eq=np.ones((1, 2)),
                  b_eq=np.ones(2))


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(37)
    prob = random_qp(rng, 6, 1, 3)
    path = tmp_path / "qp_dump.txt"
    sol = solve_qp(prob, QpSettings(dump_path=str(path)))
    loaded = load_qp_problem(path)
    np.testing.assert_array_equal(loaded.H.toarray(), prob.H.toarray())
    np.testing.assert_array_equal(loaded.A_eq.toarray(), prob.A_eq.toarray())
    np.testing.assert_array_equal(loaded.A_in.toarray(), prob.A_in.toarray())
    np.testing.assert_array_equal(loaded.c, prob.c)
    np.testing.assert_array_equal(loaded.b_eq, prob.b_eq)
    np.testing.assert_array_equal(loaded.b_in, prob.b_in)
    sol_b = solve_qp(loaded)
    np.testing.assert_allclose(sol_b.x, sol.x, atol=1e-9)


def test_larger_sparse_problem():
    # banded strictly convex problem with box-style inequalities
    rng = np.random.default_rng(41)
    n = 120
    main = rng.uniform(2.0, 4.0, n)
    off = rng.uniform(-0.5, 0.5, n - 1)
    H = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    c = rng.normal(size=n)
    A_in = np.vstack([np.eye(n), -np.eye(n)])
    b_in = np.full(2 * n, 0.3)
    prob = QpProblem(H, c, A_in=A_in, b_in=b_in)
    sol = solve_qp(prob)
    assert sol.status == "solved"
    res = kkt_residuals(prob, sol.x, sol.y_eq, sol.y_in)
    assert max(res.values()) <= 1e-6
    assert np.abs(sol.x).max() <= 0.3 + 1e-8
