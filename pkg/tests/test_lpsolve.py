import numpy as np
import pytest
import scipy.sparse as sps

from cosparse.geometry import build_projection_2d
from cosparse.lpsolve import (
    LPDataError, LPDimensionError, LPStatus, SolverOptions, StandardLP, _finalize, basic_solutions, nullspace_basis,
    solve,
)


def random_lp(seed, rows=3, cols=7):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(rows, cols))
    q = M @ rng.uniform(0.1, 1.0, cols)
    c = rng.uniform(0.1, 1.0, cols)
    return StandardLP(M, q, c)


def oracle_objective(lp):
    return min(lp.c @ w for w in basic_solutions(lp))


def check_optimal(lp, solution):
    assert solution.status == LPStatus.OPTIMAL
    expected = oracle_objective(lp)
    assert solution.objective == pytest.approx(expected, rel=1e-6, abs=1e-7)
    assert solution.duality_gap <= 1e-9 * (1 + abs(solution.objective))
    assert solution.primal_residual <= 1e-9 * (1 + np.abs(lp.q).max())
    assert solution.w.min() >= -1e-9


@pytest.mark.parametrize('method', ['simplex', 'ipm', 'auto'])
def test_random_lps_match_vertex_oracle(method):
    for seed in range(25):
        lp = random_lp(seed)
        check_optimal(lp, solve(lp, method=method))


def test_simplex_returns_vertex():
    lp = random_lp(3)
    solution = solve(lp, method='simplex')
    assert np.count_nonzero(solution.w > 1e-9) <= lp.shape[0]
    assert any(np.allclose(solution.w, vertex, atol=1e-8) for vertex in basic_solutions(lp))


def test_crossover_moves_to_vertex():
    lp = random_lp(11, rows=4, cols=9)
    solution = solve(lp, method='ipm', crossover=True)
    assert solution.optimal
    assert np.count_nonzero(solution.w > 1e-9) <= lp.shape[0]
    assert solution.objective == pytest.approx(oracle_objective(lp), rel=1e-6, abs=1e-7)


def test_infeasible():
    lp = StandardLP(np.array([[1.0, 1.0]]), [-1.0], [1.0, 1.0])
    assert solve(lp, method='simplex').status == LPStatus.INFEASIBLE
    assert not solve(lp).optimal


def test_unbounded():
    lp = StandardLP(np.array([[1.0, -1.0]]), [0.0], [-1.0, 0.0])
    assert solve(lp, method='simplex').status == LPStatus.UNBOUNDED
    assert not solve(lp).optimal


def test_zero_row_with_nonzero_rhs_is_infeasible():
    lp = StandardLP(np.array([[1.0, 1.0], [0.0, 0.0]]), [1.0, 2.0], [1.0, 1.0])
    assert solve(lp, method='simplex').status == LPStatus.INFEASIBLE
    assert solve(lp, method='ipm').status == LPStatus.INFEASIBLE


def test_redundant_rows():
    M = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    lp = StandardLP(M, [1.0, 2.0, 1.0], [1.0, 0.0, 1.0])
    for method in ('simplex', 'auto'):
        solution = solve(lp, method=method)
        assert solution.optimal
        assert solution.objective == pytest.approx(0.0, abs=1e-8)
        assert solution.w[1] == pytest.approx(1.0, abs=1e-7)


def test_repeated_rows_leave_several_artificials():
    M = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    lp = StandardLP(M, [1.0, 2.0, 1.0, 2.0], [1.0, 2.0, 3.0, 1.0])
    solution = solve(lp, method='simplex')
    assert solution.optimal
    assert solution.objective == pytest.approx(3.0)
    np.testing.assert_allclose(solution.w, [1.0, 0.0, 0.0, 2.0], atol=1e-9)


def test_projection_rows_are_dependent():
    A = build_projection_2d(5, 3)
    m, n = A.shape
    g = np.zeros(n)
    g[12] = 1.0
    M = sps.bmat([[A, -A], [sps.csr_matrix(g), sps.csr_matrix(-g)]], format='csr')
    q = np.zeros(m + 1)
    q[-1] = 1.0
    solution = solve(StandardLP(M, q, np.ones(2 * n)), method='simplex')
    assert solution.optimal
    assert solution.objective == pytest.approx(6.0)


def test_dual_residual_is_checked():
    lp = StandardLP(np.array([[1.0, 1.0]]), [1.0], [1.0, 2.0])
    opts = SolverOptions()
    wrong = _finalize(lp, LPStatus.OPTIMAL, [0.0, 1.0], [2.0], 0, 'test', opts)
    assert wrong.status == LPStatus.ITER_LIMIT
    assert wrong.dual_residual == pytest.approx(1.0)
    right = _finalize(lp, LPStatus.OPTIMAL, [1.0, 0.0], [1.0], 0, 'test', opts)
    assert right.optimal
    for method in ('simplex', 'ipm'):
        assert solve(lp, method=method).dual_residual <= 1e-8


def test_no_constraints():
    empty = sps.csr_matrix((0, 3))
    solution = solve(StandardLP(empty, np.zeros(0), [1.0, 2.0, 0.0]))
    assert solution.optimal and np.all(solution.w == 0)
    assert solve(StandardLP(empty, np.zeros(0), [1.0, -1.0, 0.0])).status == LPStatus.UNBOUNDED


def test_lp_validation():
    with pytest.raises(LPDimensionError):
        StandardLP(np.ones((2, 3)), np.ones(3), np.ones(3))
    with pytest.raises(LPDataError):
        StandardLP(np.ones((1, 2)), [np.nan], np.ones(2))
    with pytest.raises(ValueError):
        solve(random_lp(0), method='newton')


def test_iteration_limit_is_a_status():
    lp = random_lp(5, rows=6, cols=20)
    solution = solve(lp, SolverOptions(max_iters=1, method='ipm'))
    assert solution.status == LPStatus.ITER_LIMIT
    assert solution.summary()['status'] == 'IterLimit'


def test_nullspace_basis():
    A = np.array([[1.0, 1.0, 0.0]])
    Z = nullspace_basis(sps.csr_matrix(A))
    assert Z.shape == (3, 2)
    assert np.allclose(A @ Z, 0)
    assert np.allclose(Z.T @ Z, np.eye(2))


@pytest.mark.slow
def test_random_lps_match_vertex_oracle_full():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        cols = int(rng.integers(3, 13))
        rows = int(rng.integers(1, cols))
        lp = random_lp(seed + 10_000, rows=rows, cols=cols)
        check_optimal(lp, solve(lp))
