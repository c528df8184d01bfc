"""
Standard form linear programming: min c.w subject to M w = q, w >= 0.

Two methods are provided. The default is a homogeneous self-dual interior
point method with Mehrotra predictor-corrector steps, factoring the normal
equations M D M^T with a sparse LU. A dense two-phase revised simplex with
Bland's rule handles small problems, serves as fallback, and provides vertex
solutions through an optional crossover.

Every solution is re-checked outside the solver loops by _finalize, which
computes residuals and the duality gap from (w, y) alone.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sps
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

SIMPLEX_MAX_VARS = 5000

# normal equation regularization, relative to the largest diagonal entry
REGULARIZATION = 1e-13
REFINEMENT_STEPS = 2

# fraction of the step to the boundary taken in the interior point method
STEP_FRACTION = 0.99995


class LPDimensionError(ValueError):
    """Raised when M, q and c do not agree in shape."""


class LPDataError(ValueError):
    """Raised when LP data contains NaN or Inf."""


class LPStatus(str, Enum):
    OPTIMAL = 'Optimal'
    INFEASIBLE = 'Infeasible'
    UNBOUNDED = 'Unbounded'
    ITER_LIMIT = 'IterLimit'


@dataclass(frozen=True, eq=False)
class StandardLP:
    M: sps.csr_matrix
    q: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        M = sps.csr_matrix(self.M, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        c = np.asarray(self.c, dtype=float).ravel()
        if M.shape != (q.size, c.size):
            raise LPDimensionError(f'M is {M.shape}, q has {q.size} entries, c has {c.size}')
        if not (np.all(np.isfinite(M.data)) and np.all(np.isfinite(q)) and np.all(np.isfinite(c))):
            raise LPDataError('LP data must be finite')
        M.eliminate_zeros()
        M.sort_indices()
        object.__setattr__(self, 'M', M)
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'c', c)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.M.shape


@dataclass
class SolverOptions:
    feas_tol: float = 1e-9
    gap_tol: float = 1e-9
    max_iters: int = 200
    method: str = 'auto'
    crossover: bool = False


@dataclass
class LPSolution:
    status: LPStatus
    w: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int = 0
    method: str = ''
    y: Optional[np.ndarray] = field(default=None, repr=False)
    message: str = ''

    @property
    def optimal(self) -> bool:
        return self.status == LPStatus.OPTIMAL

    def summary(self) -> dict:
        return {
            'status': self.status.value,
            'objective': self.objective,
            'primal_residual': self.primal_residual,
            'dual_residual': self.dual_residual,
            'duality_gap': self.duality_gap,
            'iterations': int(self.iterations),
            'method': self.method,
            'message': self.message,
        }


def _finalize(lp: StandardLP, status: LPStatus, w, y, iterations: int, method: str,
              opts: SolverOptions, message: str = '', check_dual: bool = True) -> LPSolution:
    """Recomputes residuals and gap; Optimal is downgraded to IterLimit when they fail.

    check_dual is off for column restricted solves, whose duals only price
    the allowed columns.
    """
    r, N = lp.shape
    w = np.zeros(N) if w is None else np.asarray(w, dtype=float)
    y = np.zeros(r) if y is None else np.asarray(y, dtype=float)
    objective = float(lp.c @ w)
    primal = float(np.max(np.abs(lp.M @ w - lp.q), initial=0.0))
    reduced = lp.c - lp.M.T @ y
    dual = float(np.max(-reduced, initial=0.0))
    gap = float(abs(objective - lp.q @ y))

    if status == LPStatus.OPTIMAL:
        feasible = primal <= opts.feas_tol * (1 + np.max(np.abs(lp.q), initial=0.0)) \
            and np.min(w, initial=0.0) >= -opts.feas_tol
        dual_ok = not check_dual or dual <= opts.feas_tol * (1 + np.max(np.abs(lp.c), initial=0.0))
        if not feasible or not dual_ok or gap > opts.gap_tol * (1 + abs(objective)):
            logger.debug(f'{method}: final check failed primal={primal:.2e} dual={dual:.2e} gap={gap:.2e}')
            status = LPStatus.ITER_LIMIT
            message = message or 'tolerances not met on final check'

    return LPSolution(status, w, objective, primal, dual, gap, iterations, method, y, message)


def _unconstrained(lp: StandardLP, opts: SolverOptions, method: str) -> LPSolution:
    if np.any(lp.c < 0):
        return _finalize(lp, LPStatus.UNBOUNDED, None, None, 0, method, opts, 'no constraints')
    return _finalize(lp, LPStatus.OPTIMAL, np.zeros(lp.shape[1]), None, 0, method, opts)


def _presolve(lp: StandardLP, tol: float):
    """Drops all zero rows, returns (kept row mask, consistent flag)."""
    row_nnz = np.diff(lp.M.indptr)
    empty = row_nnz == 0
    consistent = bool(np.all(np.abs(lp.q[empty]) <= tol * (1 + np.max(np.abs(lp.q), initial=0.0))))
    return ~empty, consistent


class _NormalEquations:

    def __init__(self, M: sps.csc_matrix, D: np.ndarray):
        self.M = M
        K = (M @ sps.diags(D) @ M.T).tocsc()
        diagonal = K.diagonal()
        scale = max(1.0, float(diagonal.max(initial=0.0)))
        self.K = K
        self.factor = None
        delta = REGULARIZATION * scale
        for _ in range(6):
            try:
                self.factor = splu((K + delta * sps.identity(K.shape[0], format='csc')).tocsc())
                break
            except RuntimeError:
                delta *= 100
        if self.factor is None:
            raise np.linalg.LinAlgError('normal equations could not be factored')

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        v = self.factor.solve(rhs)
        for _ in range(REFINEMENT_STEPS):
            v = v + self.factor.solve(rhs - self.K @ v)
        return v


def _sym_solve(normal: _NormalEquations, M, Dinv, r1, r2):
    v = normal.solve(r2 + M @ (Dinv * r1))
    u = Dinv * (M.T @ v - r1)
    return u, v


def _max_step(x, d_x, z, d_z, tau, d_tau, kappa, d_kappa, fraction) -> float:
    steps = [1.0]
    neg = d_x < 0
    if np.any(neg):
        steps.append(fraction * np.min(x[neg] / -d_x[neg]))
    neg = d_z < 0
    if np.any(neg):
        steps.append(fraction * np.min(z[neg] / -d_z[neg]))
    if d_tau < 0:
        steps.append(fraction * tau / -d_tau)
    if d_kappa < 0:
        steps.append(fraction * kappa / -d_kappa)
    return float(min(steps))


def _solve_ipm(lp: StandardLP, opts: SolverOptions) -> LPSolution:
    """Homogeneous self-dual interior point method.

    Iterates on (x, y, z, tau, kappa) from the all-ones start; the scaled
    point x / tau converges to an optimum, or tau -> 0 certifies
    infeasibility or unboundedness.
    """
    keep, consistent = _presolve(lp, opts.feas_tol)
    if not consistent:
        return _finalize(lp, LPStatus.INFEASIBLE, None, None, 0, 'ipm', opts, 'zero row with nonzero rhs')
    if not np.any(keep):
        return _unconstrained(lp, opts, 'ipm')
    M = lp.M[keep].tocsc()
    b = lp.q[keep]
    c = lp.c
    r, N = M.shape

    x, y, z = np.ones(N), np.zeros(r), np.ones(N)
    tau, kappa = 1.0, 1.0
    b_scale = 1 + np.max(np.abs(b), initial=0.0)
    c_scale = 1 + np.max(np.abs(c), initial=0.0)

    def full_dual(y_kept):
        y_full = np.zeros(lp.shape[0])
        y_full[keep] = y_kept
        return y_full

    iteration = 0
    while True:
        w = x / tau
        primal = np.max(np.abs(M @ w - b), initial=0.0)
        dual = np.max(np.abs(c - M.T @ (y / tau) - z / tau), initial=0.0)
        objective = c @ w
        gap = abs(objective - b @ (y / tau))
        if primal <= opts.feas_tol * b_scale and dual <= opts.feas_tol * c_scale \
                and gap <= opts.gap_tol * (1 + abs(objective)):
            return _finalize(lp, LPStatus.OPTIMAL, w, full_dual(y / tau), iteration, 'ipm', opts)

        mu = (x @ z + tau * kappa) / (N + 1)
        if tau < opts.feas_tol * max(1.0, kappa) and mu < opts.feas_tol:
            status = LPStatus.INFEASIBLE if b @ y > 0 else LPStatus.UNBOUNDED
            return _finalize(lp, status, None, None, iteration, 'ipm', opts,
                             'homogeneous embedding certified no finite optimum')
        if iteration >= opts.max_iters:
            return _finalize(lp, LPStatus.ITER_LIMIT, w, full_dual(y / tau), iteration, 'ipm', opts,
                             'iteration limit reached')
        iteration += 1

        r_p = b * tau - M @ x
        r_d = c * tau - M.T @ y - z
        r_g = c @ x - b @ y + kappa
        Dinv = x / z
        try:
            normal = _NormalEquations(M, Dinv)
            p, q = _sym_solve(normal, M, Dinv, c, b)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as e:
            return _finalize(lp, LPStatus.ITER_LIMIT, w, full_dual(y / tau), iteration, 'ipm', opts,
                             f'numerical difficulties: {e}')

        gamma, alpha = 0.0, 0.0
        d_x = d_z = np.zeros(N)
        d_tau = d_kappa = 0.0
        for corrector in (False, True):
            eta = 1 - gamma
            rhs_xs = gamma * mu - x * z
            rhs_tk = gamma * mu - tau * kappa
            if corrector:
                rhs_xs = rhs_xs - d_x * d_z
                rhs_tk = rhs_tk - d_tau * d_kappa
            u, v = _sym_solve(normal, M, Dinv, eta * r_d - rhs_xs / x, eta * r_p)
            d_tau = (eta * r_g + rhs_tk / tau - (-c @ u + b @ v)) / (kappa / tau + (-c @ p + b @ q))
            d_x = u + p * d_tau
            d_y = v + q * d_tau
            d_z = (rhs_xs - z * d_x) / x
            d_kappa = (rhs_tk - kappa * d_tau) / tau
            alpha = _max_step(x, d_x, z, d_z, tau, d_tau, kappa, d_kappa, 1.0)
            gamma = (1 - alpha) ** 2 * min(0.1, 1 - alpha)

        alpha = _max_step(x, d_x, z, d_z, tau, d_tau, kappa, d_kappa, STEP_FRACTION)
        x = x + alpha * d_x
        y = y + alpha * d_y
        z = z + alpha * d_z
        tau = tau + alpha * d_tau
        kappa = kappa + alpha * d_kappa
        logger.debug(f'ipm iter {iteration}: alpha={alpha:.3f} mu={mu:.2e} primal={primal:.2e} gap={gap:.2e}')


def _simplex_phase(B_cols: List[int], A: np.ndarray, b: np.ndarray, c: np.ndarray,
                   tol: float, max_iters: int, allowed: np.ndarray):
    """Revised simplex iterations on a feasible basis, Bland's rule.

    Returns (status, basis, iterations). Only columns flagged in allowed may
    enter the basis.
    """
    basis = list(B_cols)
    for iteration in range(max_iters):
        lu = scipy.linalg.lu_factor(A[:, basis])
        x_b = scipy.linalg.lu_solve(lu, b)
        y = scipy.linalg.lu_solve(lu, c[basis], trans=1)
        reduced = c - A.T @ y
        reduced[basis] = 0.0
        candidates = np.flatnonzero((reduced < -tol) & allowed)
        if candidates.size == 0:
            return LPStatus.OPTIMAL, basis, iteration
        entering = int(candidates[0])
        direction = scipy.linalg.lu_solve(lu, A[:, entering])
        positive = direction > tol
        if not np.any(positive):
            return LPStatus.UNBOUNDED, basis, iteration
        ratios = np.full(direction.size, np.inf)
        ratios[positive] = np.maximum(x_b[positive], 0.0) / direction[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, best))
        leaving = min(ties, key=lambda i: basis[i])
        basis[leaving] = entering
    return LPStatus.ITER_LIMIT, basis, max_iters


def _solve_simplex(lp: StandardLP, opts: SolverOptions, columns: Optional[np.ndarray] = None) -> LPSolution:
    """Dense two-phase revised simplex; columns restricts the usable variables."""
    keep, consistent = _presolve(lp, opts.feas_tol)
    if not consistent:
        return _finalize(lp, LPStatus.INFEASIBLE, None, None, 0, 'simplex', opts, 'zero row with nonzero rhs')
    if not np.any(keep):
        return _unconstrained(lp, opts, 'simplex')
    A = lp.M[keep].toarray()
    b = lp.q[keep].copy()
    r, N = A.shape
    allowed = np.ones(N, dtype=bool) if columns is None else np.isin(np.arange(N), columns)
    max_iters = max(1000, 50 * (r + N))
    tol = 1e-11 * max(1.0, np.abs(A).max(initial=1.0))

    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1

    # phase one: artificial identity appended
    A1 = np.hstack([A, np.eye(r)])
    c1 = np.concatenate([np.zeros(N), np.ones(r)])
    allowed1 = np.concatenate([allowed, np.zeros(r, dtype=bool)])
    basis = list(range(N, N + r))
    status, basis, it1 = _simplex_phase(basis, A1, b, c1, tol, max_iters, allowed1)
    x_b = scipy.linalg.solve(A1[:, basis], b) if r else np.zeros(0)
    infeasibility = float(sum(x for j, x in zip(basis, x_b) if j >= N))
    if status == LPStatus.ITER_LIMIT:
        return _finalize(lp, status, None, None, it1, 'simplex', opts, 'phase one iteration limit')
    if infeasibility > opts.feas_tol * (1 + np.max(np.abs(b), initial=0.0)):
        return _finalize(lp, LPStatus.INFEASIBLE, None, None, it1, 'simplex', opts, 'phase one optimum positive')

    # drive artificials out, dropping redundant rows
    rows = list(range(r))
    for position in range(r - 1, -1, -1):
        if basis[position] < N:
            continue
        B_inv_row = scipy.linalg.solve(A1[np.ix_(rows, basis)].T, np.eye(len(rows))[position])
        tableau_row = B_inv_row @ A1[rows][:, :N]
        tableau_row[[j for j in basis if j < N]] = 0.0
        tableau_row[~allowed] = 0.0
        pivots = np.flatnonzero(np.abs(tableau_row) > 1e-9)
        if pivots.size:
            basis[position] = int(pivots[0])
        else:
            # row of this artificial is a combination of the others
            rows.remove(basis[position] - N)
            del basis[position]

    A2 = A[rows]
    b2 = b[rows]
    status, basis, it2 = _simplex_phase(basis, A2, b2, lp.c, tol, max_iters, allowed)
    w = np.zeros(N)
    y_rows = np.zeros(r)
    if basis:
        lu = scipy.linalg.lu_factor(A2[:, basis])
        w[basis] = np.maximum(scipy.linalg.lu_solve(lu, b2), 0.0)
        y_rows[rows] = scipy.linalg.lu_solve(lu, lp.c[basis], trans=1)
    y_rows[flip] *= -1
    y = np.zeros(lp.shape[0])
    y[keep] = y_rows
    if status == LPStatus.UNBOUNDED:
        return _finalize(lp, status, None, None, it1 + it2, 'simplex', opts, 'improving ray found')
    return _finalize(lp, status, w, y, it1 + it2, 'simplex', opts, check_dual=columns is None)


def crossover(lp: StandardLP, solution: LPSolution, opts: SolverOptions) -> LPSolution:
    """Moves an interior optimum to a vertex of its optimal face.

    Variables below a relative threshold are fixed at zero and the restricted
    problem is re-solved by simplex. The vertex is accepted only if its
    objective matches the interior objective within the gap tolerance.
    """
    if not solution.optimal:
        return solution
    threshold = 1e-7 * max(1.0, np.max(solution.w, initial=0.0))
    support = np.flatnonzero(solution.w > threshold)
    vertex = _solve_simplex(lp, opts, columns=support)
    if vertex.optimal and abs(vertex.objective - solution.objective) <= \
            10 * opts.gap_tol * (1 + abs(solution.objective)):
        vertex.method = f'{solution.method}+crossover'
        return vertex
    if lp.shape[1] <= SIMPLEX_MAX_VARS:
        logger.debug('crossover on the optimal face failed, solving full problem by simplex')
        full = _solve_simplex(lp, opts)
        full.method = f'{solution.method}+simplex'
        return full
    logger.warning('crossover failed, keeping interior solution')
    return solution


def solve(lp: StandardLP, opts: Optional[SolverOptions] = None, **overrides) -> LPSolution:
    """Solves a standard form LP.

    Args:
        lp: the problem.
        opts: tolerances, iteration limit, method ('auto', 'ipm', 'simplex')
            and crossover flag. Keyword overrides replace single fields.

    Returns:
        LPSolution whose status is Optimal only if the residual and gap
        contracts hold on an independent recomputation.
    """
    opts = replace(opts or SolverOptions(), **overrides)
    r, N = lp.shape
    if r == 0:
        return _unconstrained(lp, opts, 'trivial')

    if opts.method == 'simplex':
        return _solve_simplex(lp, opts)
    if opts.method not in ('auto', 'ipm'):
        raise ValueError(f'Unknown LP method {opts.method!r}')

    solution = _solve_ipm(lp, opts)
    if solution.status == LPStatus.ITER_LIMIT and opts.method == 'auto' and N <= SIMPLEX_MAX_VARS:
        logger.debug(f'ipm stopped ({solution.message}), falling back to simplex')
        solution = _solve_simplex(lp, opts)
    elif opts.crossover and solution.optimal:
        solution = crossover(lp, solution, opts)
    return solution


def nullspace_basis(A, rcond: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of N(A) as columns, from a dense SVD."""
    dense = A.toarray() if sps.issparse(A) else np.asarray(A, dtype=float)
    return scipy.linalg.null_space(dense, rcond=rcond)


def basic_solutions(lp: StandardLP, tol: float = 1e-9) -> List[np.ndarray]:
    """All basic feasible solutions by enumerating every column basis.

    Exponential in the problem size; a brute force reference for small LPs
    whose M has full row rank.
    """
    A = lp.M.toarray()
    r, N = A.shape
    vertices = []
    for columns in itertools.combinations(range(N), r):
        B = A[:, columns]
        if np.linalg.matrix_rank(B) < r:
            continue
        x_b = np.linalg.solve(B, lp.q)
        if np.min(x_b, initial=0.0) < -tol:
            continue
        w = np.zeros(N)
        w[list(columns)] = np.maximum(x_b, 0.0)
        if not any(np.allclose(w, seen, atol=tol) for seen in vertices):
            vertices.append(w)
    return vertices
