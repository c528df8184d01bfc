"""
Matrix diagnostics: numerical rank, spark, nullspace property bounds and the
bivariate Haar transform.

Exact spark is only computable for tiny matrices. spark_bruteforce finds it
by enumerating circuits (minimal dependent column sets); larger matrices get
an upper bound from an exhibited sparse nullspace vector.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sps
from pydantic import BaseModel, Field
from tqdm import tqdm

from cosparse.geometry import ProjectionGeometry
from cosparse.lpsolve import SIMPLEX_MAX_VARS, StandardLP, nullspace_basis, solve

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
RANK_GAP = 1e4
NULLVECTOR_TOL = 1e-8
SUPPORT_TOL = 1e-6
DEFAULT_SPARK_BUDGET = 10 ** 9

# (matrix shape, nullvector l0) -> Haar support of the known sparsest nullvector
REFERENCE_HAAR_L0 = {
    ((ProjectionGeometry(2, 16, 8).num_rays(), 256), 16): 32,
}

# closed forms of the rank, spark and NSP order per (dim, directions)
GEOMETRY_CONSTANTS = {
    (2, 3): (lambda d: 4 * d - 4, 6, 2),
    (2, 4): (lambda d: 6 * d - 9, 8, 3),
    (2, 5): (lambda d: 7 * d + d // 2 - 13, 12, 5),
    (2, 6): (lambda d: 8 * d + 2 * (d // 2) - 19, 16, 7),
    (2, 7): (lambda d: 9 * d + 3 * (d // 2) - 23, 16, 7),
    (2, 8): (lambda d: 10 * d + 4 * (d // 2) - 29, 16, 7),
    (3, 3): (lambda d: 3 * d * d - 3 * d + 1, 8, 3),
    (3, 4): (lambda d: 8 * d * d - 20 * d + 16, 15, 6),
}


class AnalysisError(ValueError):
    """Raised for invalid diagnostic inputs."""


class NullspaceError(AnalysisError):
    """Raised when a nullspace is trivial or a vector is not in it."""


class RankGapError(AnalysisError):
    """Raised when singular values show no clear gap at the rank cutoff."""


class BudgetExceededError(RuntimeError):
    """Raised instead of returning a partial spark answer."""


def expected_rank(dim: int, d: int, num_dirs: int) -> int:
    try:
        return GEOMETRY_CONSTANTS[(dim, num_dirs)][0](d)
    except KeyError:
        raise AnalysisError(f'No closed form for dim={dim} with {num_dirs} directions')


def expected_spark(dim: int, num_dirs: int) -> Tuple[int, int]:
    """(spark, NSP order) of the setup, constant in d once m < n."""
    try:
        _, spark, nsp = GEOMETRY_CONSTANTS[(dim, num_dirs)]
    except KeyError:
        raise AnalysisError(f'No closed form for dim={dim} with {num_dirs} directions')
    return spark, nsp


def numerical_rank(A, tol: float = RANK_TOL, check_gap: bool = True) -> int:
    """Number of singular values above tol times the largest.

    Args:
        A: sparse or dense matrix.
        tol: relative cutoff.
        check_gap: require the kept and dropped singular values to be
            separated by at least RANK_GAP.

    Returns:
        the numerical rank.
    """
    dense = A.toarray() if sps.issparse(A) else np.asarray(A, dtype=float)
    if dense.size == 0:
        return 0
    s = scipy.linalg.svdvals(dense)
    if s[0] == 0:
        return 0
    rank = int(np.count_nonzero(s > tol * s[0]))
    if check_gap and rank < s.size and s[rank] > 0 and s[rank - 1] / s[rank] < RANK_GAP:
        raise RankGapError(f'Singular value gap {s[rank - 1] / s[rank]:.3g} at rank {rank} below {RANK_GAP:g}')
    return rank


@dataclass(frozen=True)
class SparkResult:
    max_k: int
    exact: Optional[int] = None
    circuit: Tuple[int, ...] = ()
    nodes: int = 0

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def __str__(self) -> str:
        return f'Exact({self.exact})' if self.is_exact else f'LowerBoundOnly(>{self.max_k})'


class _CircuitSearch:
    """Depth first search for a dependent column set with minimum column c0.

    A minimal dependent set touches every row it touches at least twice, so
    while some row is touched exactly once, one of the columns through that
    row must be added.
    """

    def __init__(self, A: sps.spmatrix, budget: int):
        self.csc = sps.csc_matrix(A)
        self.csr = sps.csr_matrix(A)
        self.n = A.shape[1]
        self.touch = np.zeros(A.shape[0], dtype=np.int64)
        col_nnz = np.diff(self.csc.indptr)
        self.max_col_nnz = max(1, int(col_nnz.max(initial=1)))
        self.budget = budget
        self.nodes = 0

    def _rows(self, j):
        return self.csc.indices[self.csc.indptr[j]:self.csc.indptr[j + 1]]

    def _cols(self, r):
        return self.csr.indices[self.csr.indptr[r]:self.csr.indptr[r + 1]]

    def _dependent(self, S: List[int]) -> bool:
        sub = self.csc[:, S]
        rows = np.unique(sub.indices)
        if rows.size < len(S):
            return True
        return np.linalg.matrix_rank(sub[rows].toarray()) < len(S)

    def _search(self, S: List[int], members: set, c0: int, k: int) -> Optional[List[int]]:
        self.nodes += 1
        if self.nodes > self.budget:
            raise BudgetExceededError(f'Spark search exceeded {self.budget} nodes')
        singles = np.flatnonzero(self.touch == 1)
        if singles.size == 0:
            if self._dependent(S):
                return list(S)
            if len(S) >= k:
                return None
            candidates = range(c0 + 1, self.n)
        else:
            if len(S) + math.ceil(singles.size / self.max_col_nnz) > k:
                return None
            candidates = self._cols(singles[0])
        for j in candidates:
            j = int(j)
            if j <= c0 or j in members:
                continue
            S.append(j)
            members.add(j)
            self.touch[self._rows(j)] += 1
            found = self._search(S, members, c0, k)
            self.touch[self._rows(j)] -= 1
            members.discard(j)
            S.pop()
            if found:
                return found
        return None

    def from_column(self, c0: int, max_k: int) -> Optional[List[int]]:
        """Smallest circuit with minimum column c0 and at most max_k columns."""
        for k in range(1, max_k + 1):
            self.touch[:] = 0
            self.touch[self._rows(c0)] += 1
            found = self._search([c0], {c0}, c0, k)
            if found:
                return found
        return None


def _spark_task(args):
    A, c0, max_k, budget = args
    search = _CircuitSearch(A, budget)
    return c0, search.from_column(c0, max_k), search.nodes


def spark_bruteforce(A, max_k: int, budget: int = DEFAULT_SPARK_BUDGET, workers: int = 1,
                     verbose: bool = False) -> SparkResult:
    """Exact spark if it is at most max_k, otherwise a certified lower bound.

    Args:
        A: matrix, sparse or dense.
        max_k: largest column count searched.
        budget: refuses up front when C(n, max_k) exceeds it, and stops with
            BudgetExceededError when the search visits more nodes.
        workers: processes, each taking a share of the leading columns.

    Returns:
        SparkResult, exact when a dependent set of at most max_k columns exists.
    """
    A = sps.csr_matrix(A)
    n = A.shape[1]
    max_k = min(max_k, n)
    if math.comb(n, max_k) > budget:
        raise BudgetExceededError(f'C({n}, {max_k}) = {math.comb(n, max_k)} exceeds budget {budget}')

    best: Optional[List[int]] = None
    nodes = 0
    if workers > 1:
        tasks = [(A, c0, max_k, max(1, budget // n)) for c0 in range(n)]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for c0, found, visited in tqdm(executor.map(_spark_task, tasks), total=n,
                                          disable=not verbose, desc='spark'):
                nodes += visited
                if found and (best is None or len(found) < len(best)):
                    best = found
    else:
        search = _CircuitSearch(A, budget)
        for c0 in tqdm(range(n), disable=not verbose, desc='spark'):
            limit = max_k if best is None else len(best) - 1
            if limit < 1:
                break
            found = search.from_column(c0, limit)
            if found:
                best = found
        nodes = search.nodes

    logger.debug(f'spark search visited {nodes} nodes')
    if best is None:
        return SparkResult(max_k=max_k, nodes=nodes)
    return SparkResult(max_k=max_k, exact=len(best), circuit=tuple(sorted(best)), nodes=nodes)


@dataclass
class NullvectorResult:
    vector: np.ndarray
    l0: int
    residual: float
    trials: int
    history: List[int] = field(default_factory=list)

    def rescaled(self) -> np.ndarray:
        """Vector divided by its smallest nonzero magnitude."""
        support = np.abs(self.vector) > SUPPORT_TOL * np.abs(self.vector).max()
        return self.vector / np.abs(self.vector[support]).min()


def _support(v: np.ndarray) -> np.ndarray:
    scale = np.abs(v).max(initial=0.0)
    return np.flatnonzero(np.abs(v) > SUPPORT_TOL * scale)


def _refine(A: sps.csc_matrix, v: np.ndarray) -> np.ndarray:
    support = _support(v)
    Z = nullspace_basis(A[:, support])
    if Z.shape[1] == 0:
        return v
    refined = np.zeros_like(v)
    refined[support] = Z @ (Z.T @ v[support]) if Z.shape[1] > 1 else Z[:, 0] * np.sign(Z[:, 0] @ v[support])
    return refined


def sparsest_nullvector_search(A, trials: int = 20, seed: int = 0, verbose: bool = False) -> NullvectorResult:
    """Searches N(A) for a sparse vector by l1 minimization.

    Each trial solves min ||v||_1 s.t. A v = 0, g.v = 1 with g either a
    random signed unit vector or a Gaussian vector, thresholds the support,
    re-fits the vector on that support and keeps the sparsest one whose
    residual passes. The support size bounds spark(A) from above.
    """
    A = sps.csc_matrix(A, dtype=float)
    m, n = A.shape
    Z = nullspace_basis(A)
    if Z.shape[1] == 0:
        raise NullspaceError('Matrix has trivial nullspace')
    reachable = np.flatnonzero(np.linalg.norm(Z, axis=1) > 1e-8)
    rng = np.random.default_rng(seed)
    method = 'simplex' if 2 * n <= SIMPLEX_MAX_VARS else 'ipm'

    best: Optional[np.ndarray] = None
    history = []
    for trial in tqdm(range(trials), disable=not verbose, desc='nullvector'):
        if trial % 2 == 0:
            g = np.zeros(n)
            g[rng.choice(reachable)] = rng.choice([-1.0, 1.0])
        else:
            g = rng.standard_normal(n)
        M = sps.bmat([[A, -A], [sps.csr_matrix(g), sps.csr_matrix(-g)]], format='csr')
        q = np.zeros(m + 1)
        q[-1] = 1.0
        solution = solve(StandardLP(M, q, np.ones(2 * n)), method=method, crossover=method == 'ipm')
        if not solution.optimal:
            logger.debug(f'nullvector trial {trial}: {solution.status.value}')
            continue
        v = _refine(A, solution.w[:n] - solution.w[n:])
        if not np.any(v) or np.linalg.norm(A @ v) > NULLVECTOR_TOL * np.linalg.norm(v):
            continue
        l0 = _support(v).size
        history.append(l0)
        if best is None or l0 < _support(best).size:
            best = v

    if best is None:
        raise NullspaceError(f'No trial out of {trials} produced a verified nullspace vector')
    residual = float(np.linalg.norm(A @ best) / np.linalg.norm(best))
    return NullvectorResult(best, int(_support(best).size), residual, trials, history)


def nsp_order_upper(A, nullvec: np.ndarray, tol: float = NULLVECTOR_TOL) -> int:
    """min(#negative, #positive) - 1, an upper bound on the nonnegative NSP order."""
    v = np.asarray(nullvec, dtype=float).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise NullspaceError('Zero vector')
    if np.linalg.norm(A @ v) > tol * norm:
        raise NullspaceError(f'Residual {np.linalg.norm(A @ v) / norm:.3g} exceeds {tol:g}')
    support = _support(v)
    negative = int(np.count_nonzero(v[support] < 0))
    positive = int(np.count_nonzero(v[support] > 0))
    return min(negative, positive) - 1


def _check_power_of_two(d: int):
    if d < 1 or d & (d - 1):
        raise AnalysisError(f'Haar transform needs a power of two side, got {d}')


def _as_square(values) -> np.ndarray:
    grid = values.as_grid() if hasattr(values, 'as_grid') else np.asarray(values, dtype=float)
    if grid.ndim == 1:
        d = math.isqrt(grid.size)
        if d * d != grid.size:
            raise AnalysisError(f'{grid.size} values do not form a square image')
        grid = grid.reshape(d, d)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise AnalysisError(f'Haar transform needs a square 2D image, got shape {grid.shape}')
    _check_power_of_two(grid.shape[0])
    return grid.astype(float)


def haar_2d(image) -> np.ndarray:
    """Orthonormal non-standard bivariate Haar transform, flattened row-major.

    Each level transforms rows then columns of the current low-pass block
    and halves it, until the block is 1x1.
    """
    out = _as_square(image).copy()
    size = out.shape[0]
    while size > 1:
        half = size // 2
        block = out[:size, :size]
        for axis in (1, 0):
            even = np.take(block, np.arange(0, size, 2), axis=axis)
            odd = np.take(block, np.arange(1, size, 2), axis=axis)
            block = np.concatenate([(even + odd) / np.sqrt(2), (even - odd) / np.sqrt(2)], axis=axis)
        out[:size, :size] = block
        size = half
    return out.ravel()


def ihaar_2d(coefficients) -> np.ndarray:
    out = _as_square(coefficients).copy()
    d = out.shape[0]
    size = 2
    while size <= d:
        half = size // 2
        block = out[:size, :size]
        for axis in (0, 1):
            low = np.take(block, np.arange(half), axis=axis)
            high = np.take(block, np.arange(half, size), axis=axis)
            even = (low + high) / np.sqrt(2)
            odd = (low - high) / np.sqrt(2)
            shape = list(block.shape)
            merged = np.empty(shape)
            index = [slice(None)] * 2
            index[axis] = slice(0, size, 2)
            merged[tuple(index)] = even
            index[axis] = slice(1, size, 2)
            merged[tuple(index)] = odd
            block = merged
        out[:size, :size] = block
        size *= 2
    return out.ravel()


class MatrixDiagnostics(BaseModel):
    m: int
    n: int
    rank: int
    spark_upper: Optional[int] = None
    spark_exact: Optional[int] = None
    spark_searched_to: Optional[int] = None
    nsp_order_upper: Optional[int] = None
    sparsest_l0: Optional[int] = None
    sparsest_nullvec: Optional[List[float]] = None
    haar_l0: Optional[int] = None
    notes: List[str] = Field(default_factory=list)


def rip_order_limit(m: int, spark: int, delta: float = math.sqrt(2) - 1) -> float:
    """Largest k for which a 0/1 matrix could still have RIP of order k."""
    return min((1 + delta) / (1 - delta) * math.sqrt(m), spark - 1)


def diagnose(A, spark_max_k: Optional[int] = None, spark_budget: int = DEFAULT_SPARK_BUDGET,
             trials: int = 20, seed: int = 0, workers: int = 1, verbose: bool = False) -> MatrixDiagnostics:
    A = sps.csr_matrix(A, dtype=float)
    m, n = A.shape
    report = MatrixDiagnostics(m=m, n=n, rank=numerical_rank(A))

    if spark_max_k:
        try:
            spark = spark_bruteforce(A, spark_max_k, budget=spark_budget, workers=workers, verbose=verbose)
            report.spark_searched_to = spark.max_k
            if spark.is_exact:
                report.spark_exact = spark.exact
                report.spark_upper = spark.exact
            else:
                report.notes.append(f'spark > {spark.max_k}')
        except BudgetExceededError as e:
            report.notes.append(f'spark search refused: {e}')

    if report.rank < n and trials > 0:
        found = sparsest_nullvector_search(A, trials=trials, seed=seed, verbose=verbose)
        report.sparsest_l0 = found.l0
        report.sparsest_nullvec = [float(x) for x in found.vector]
        if report.spark_upper is None or found.l0 < report.spark_upper:
            report.spark_upper = found.l0
        report.nsp_order_upper = nsp_order_upper(A, found.vector)
        report.notes.append(f'nonnegative NSP order at most {report.nsp_order_upper} (exhibited nullspace vector)')
        d = math.isqrt(n)
        if d * d == n and d & (d - 1) == 0:
            report.haar_l0 = int(_support(haar_2d(found.vector)).size)
            reference = REFERENCE_HAAR_L0.get(((m, n), found.l0))
            if reference is not None and reference != report.haar_l0:
                report.notes.append(f'Haar support {report.haar_l0} differs from the reference {reference} '
                                    f'for a {found.l0}-sparse nullspace vector')

    if report.spark_upper is not None:
        report.notes.append(f'no RIP of order k >= {report.spark_upper} (spark)')
        if np.all(np.isin(A.data, (0.0, 1.0))):
            limit = rip_order_limit(m, report.spark_upper)
            report.notes.append(f'0/1 matrix: RIP with delta = sqrt(2) - 1 requires k <= {limit:.2f}')
    return report
