"""
Total variation recovery as a linear program, the l1 baseline, and a
uniqueness certificate for a recovered image.

The TV program min ||B u||_1 s.t. A u = b, u >= 0 becomes the standard form
LP over w = (u, v1, v2) >= 0 with

    M = [[B, -I, I],      q = [0,      c = [0, 1, 1]
         [A,  0, 0]]           b]

so that B u = v1 - v2 and the objective is 1.(v1 + v2).
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sps

from cosparse.geometry import project
from cosparse.lattice import Cosupport, Image, build_gradient, cosupport_of
from cosparse.lpsolve import LPSolution, SIMPLEX_MAX_VARS, SolverOptions, StandardLP, nullspace_basis, solve

logger = logging.getLogger(__name__)

SUCCESS_EPS = {2: 1e-6, 3: 1e-8}
CERT_TOL = 1e-8


class RecoveryError(ValueError):
    """Raised for inconsistent recovery problems."""


class RecoveryMode(str, Enum):
    TV_UNKNOWN = 'tv'
    TV_KNOWN = 'tv-known'
    L1 = 'l1'
    L1_NONNEG = 'l1-nonneg'


def _edges(cosupport) -> np.ndarray:
    if isinstance(cosupport, Cosupport):
        return cosupport.edges
    return np.unique(np.asarray(cosupport, dtype=np.int64))


def _check_shapes(A, B, b):
    if A.shape[1] != B.shape[1]:
        raise RecoveryError(f'A has {A.shape[1]} columns, B has {B.shape[1]}')
    if A.shape[0] != np.size(b):
        raise RecoveryError(f'A has {A.shape[0]} rows, b has {np.size(b)} entries')


def assemble_tv_lp(A, B, b) -> StandardLP:
    A, B = sps.csr_matrix(A), sps.csr_matrix(B)
    _check_shapes(A, B, b)
    p = B.shape[0]
    I = sps.identity(p, format='csr')
    M = sps.bmat([[B, -I, I], [A, None, None]], format='csr')
    q = np.concatenate([np.zeros(p), np.asarray(b, dtype=float)])
    c = np.concatenate([np.zeros(A.shape[1]), np.ones(2 * p)])
    return StandardLP(M, q, c)


def assemble_tv_lp_known(A, B, b, cosupport) -> StandardLP:
    """TV program with B_Lambda u = 0 imposed; auxiliaries only for the complement rows."""
    A, B = sps.csr_matrix(A), sps.csr_matrix(B)
    _check_shapes(A, B, b)
    inside = _edges(cosupport)
    if inside.size and (inside[0] < 0 or inside[-1] >= B.shape[0]):
        raise RecoveryError(f'Cosupport indices must lie in [0, {B.shape[0]})')
    outside = np.setdiff1d(np.arange(B.shape[0]), inside)
    k, ell, n, m = outside.size, inside.size, A.shape[1], A.shape[0]
    I = sps.identity(k, format='csr')
    M = sps.vstack([
        sps.hstack([B[outside], -I, I]),
        sps.hstack([B[inside], sps.csr_matrix((ell, 2 * k))]),
        sps.hstack([A, sps.csr_matrix((m, 2 * k))]),
    ], format='csr')
    q = np.concatenate([np.zeros(k + ell), np.asarray(b, dtype=float)])
    c = np.concatenate([np.zeros(n), np.ones(2 * k)])
    return StandardLP(M, q, c)


def assemble_l1_lp(A, b, nonneg: bool = True) -> StandardLP:
    """min ||u||_1 s.t. A u = b, with u >= 0 or in split form u = u+ - u-."""
    A = sps.csr_matrix(A)
    n = A.shape[1]
    if nonneg:
        return StandardLP(A, b, np.ones(n))
    return StandardLP(sps.hstack([A, -A], format='csr'), b, np.ones(2 * n))


@dataclass(frozen=True, eq=False)
class RecoveryProblem:
    A: sps.csr_matrix
    b: np.ndarray
    B: sps.csr_matrix
    mode: RecoveryMode = RecoveryMode.TV_UNKNOWN
    cosupport: Optional[np.ndarray] = None
    ground_truth: Optional[Image] = None

    def __post_init__(self):
        A, B = sps.csr_matrix(self.A, dtype=float), sps.csr_matrix(self.B, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        _check_shapes(A, B, b)
        if self.mode == RecoveryMode.TV_KNOWN and self.cosupport is None:
            raise RecoveryError('Known cosupport mode needs a cosupport')
        if self.ground_truth is not None:
            expected = A @ self.ground_truth.values
            if not np.allclose(expected, b, rtol=1e-9, atol=1e-9):
                raise RecoveryError('Measurements do not match A applied to the ground truth')
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'B', B)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'mode', RecoveryMode(self.mode))
        if self.cosupport is not None:
            object.__setattr__(self, 'cosupport', _edges(self.cosupport))

    @classmethod
    def from_image(cls, A, image: Image, mode=RecoveryMode.TV_UNKNOWN, cosupport=None) -> 'RecoveryProblem':
        mode = RecoveryMode(mode)
        if mode == RecoveryMode.TV_KNOWN and cosupport is None:
            cosupport = cosupport_of(image)
        return cls(A, project(A, image.values), build_gradient(image.lattice), mode, cosupport, image)

    def assemble(self) -> StandardLP:
        if self.mode == RecoveryMode.TV_UNKNOWN:
            return assemble_tv_lp(self.A, self.B, self.b)
        if self.mode == RecoveryMode.TV_KNOWN:
            return assemble_tv_lp_known(self.A, self.B, self.b, self.cosupport)
        return assemble_l1_lp(self.A, self.b, nonneg=self.mode == RecoveryMode.L1_NONNEG)

    def extract(self, w: np.ndarray) -> np.ndarray:
        n = self.A.shape[1]
        if self.mode == RecoveryMode.L1:
            return w[:n] - w[n:2 * n]
        return w[:n].copy()


@dataclass
class RecoveryResult:
    u: np.ndarray
    success: Optional[bool]
    l2_error: Optional[float]
    solver: LPSolution
    mode: RecoveryMode
    eps: Optional[float] = None
    tv_truth: Optional[float] = None
    tv_result: Optional[float] = None
    seconds: float = 0.0
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'mode': self.mode.value,
            'success': self.success,
            'l2_error': self.l2_error,
            'eps': self.eps,
            'tv_truth': self.tv_truth,
            'tv_result': self.tv_result,
            'seconds': self.seconds,
            'solver': self.solver.summary(),
            'notes': self.notes,
        }


def recover(problem: RecoveryProblem, eps: Optional[float] = None,
            opts: Optional[SolverOptions] = None) -> RecoveryResult:
    """Solves the problem's LP and scores it against the ground truth.

    Success means ||u - u_true||_2 <= eps * n, eps defaulting to 1e-6 in 2D
    and 1e-8 in 3D. Without ground truth success is None. A non-optimal
    solver status is never a success.
    """
    start = time.perf_counter()
    solution = solve(problem.assemble(), opts)
    u = problem.extract(solution.w)
    result = RecoveryResult(u, None, None, solution, problem.mode)
    result.tv_result = float(np.abs(problem.B @ u).sum())

    truth = problem.ground_truth
    if truth is not None:
        n = truth.lattice.n
        result.eps = eps if eps is not None else SUCCESS_EPS.get(truth.lattice.ndim, SUCCESS_EPS[3])
        result.tv_truth = float(np.abs(problem.B @ truth.values).sum())
        result.l2_error = float(np.linalg.norm(u - truth.values))
        result.success = solution.optimal and result.l2_error <= result.eps * n
    if not solution.optimal:
        result.notes.append(f'solver status {solution.status.value}: {solution.message}')
    result.seconds = time.perf_counter() - start
    logger.debug(f'recover {problem.mode.value}: status={solution.status.value} '
                 f'error={result.l2_error} in {result.seconds:.2f}s')
    return result


def index_sets(solution: LPSolution, n: int, tol: float = 1e-9) -> Tuple[np.ndarray, np.ndarray]:
    """(J, J_bar) of a TV LP solution: zero auxiliary entries indexed in w and in v."""
    w = solution.w
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    j_bar = np.flatnonzero(np.abs(w[n:]) <= tol * scale)
    return j_bar + n, j_bar


class CertificateVerdict(str, Enum):
    VIOLATED = 'Violated'
    NOT_VIOLATED = 'NotViolated'


@dataclass
class CertificateResult:
    verdict: CertificateVerdict
    minimum: float
    margin: float
    witness: Optional[np.ndarray] = None
    degenerate: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def violated(self) -> bool:
        return self.verdict == CertificateVerdict.VIOLATED

    def to_dict(self) -> dict:
        return {
            'verdict': self.verdict.value,
            'minimum': self.minimum,
            'margin': self.margin,
            'degenerate': self.degenerate,
            'notes': self.notes,
        }


class _CertificateLP:
    """min ||(G y)_L||_1 - <(G y)_Lc, s> over |y_i| <= 1, as a standard form LP.

    With z = y + 1, variables are (z, slack, t+, t-) with z + slack = 2 and
    G_L z - t+ + t- = G_L 1; the objective drops the constant s.G_Lc 1,
    which is added back in value().
    """

    def __init__(self, G_in: np.ndarray, G_out: np.ndarray, signs: np.ndarray):
        r = G_in.shape[1]
        ell = G_in.shape[0]
        self.r = r
        self.gradient = -(signs @ G_out)
        self.constant = float(signs @ G_out.sum(axis=1))
        eye_r = np.eye(r)
        eye_l = np.eye(ell)
        self.M = np.block([
            [eye_r, eye_r, np.zeros((r, 2 * ell))],
            [G_in, np.zeros((ell, r)), -eye_l, eye_l],
        ])
        self.q = np.concatenate([np.full(r, 2.0), G_in.sum(axis=1)])
        self.c = np.concatenate([self.gradient, np.zeros(r), np.ones(2 * ell)])

    def solve(self, fixed: Optional[Tuple[int, float]] = None, opts: Optional[SolverOptions] = None):
        M, q = self.M, self.q
        if fixed is not None:
            index, value = fixed
            row = np.zeros((1, M.shape[1]))
            row[0, index] = 1.0
            M = np.vstack([M, row])
            q = np.concatenate([q, [value + 1.0]])
        method = 'simplex' if M.shape[1] <= SIMPLEX_MAX_VARS else 'auto'
        solution = solve(StandardLP(sps.csr_matrix(M), q, self.c), opts, method=method)
        if not solution.optimal:
            raise RecoveryError(f'Certificate LP ended with {solution.status.value}')
        return solution.objective + self.constant, solution.w[:self.r] - 1.0


def uniqueness_certificate(A, B, cosupport, signs, tol: float = CERT_TOL,
                           opts: Optional[SolverOptions] = None) -> CertificateResult:
    """Checks ||(B u)_L||_1 > <(B u)_Lc, s> on all of N(A) minus 0.

    The minimum of the difference over the unit l_inf ball of nullspace
    coordinates decides: below -tol the condition fails and the witness is a
    direction u in N(A) along which TV decreases from any image with that
    cosupport and sign pattern. Otherwise the margin is the minimum over the
    ball's boundary, computed face by face; a margin within tol of zero is
    flagged degenerate.
    """
    B = sps.csr_matrix(B)
    inside = _edges(cosupport)
    outside = np.setdiff1d(np.arange(B.shape[0]), inside)
    signs = np.asarray(signs, dtype=float).ravel()
    if signs.size != outside.size or not np.all(np.isin(signs, (-1.0, 1.0))):
        raise RecoveryError(f'Need {outside.size} signs in {{-1, +1}}, got {signs.size}')

    Z = nullspace_basis(A)
    if Z.shape[1] == 0:
        return CertificateResult(CertificateVerdict.NOT_VIOLATED, 0.0, np.inf,
                                 notes=['A has trivial nullspace, condition holds vacuously'])

    G = np.asarray(B @ Z)
    program = _CertificateLP(G[inside], G[outside], signs)
    minimum, y = program.solve(opts=opts)
    if minimum < -tol:
        return CertificateResult(CertificateVerdict.VIOLATED, minimum, minimum, witness=-(Z @ y))

    margin = np.inf
    for index in range(Z.shape[1]):
        for value in (-1.0, 1.0):
            face, _ = program.solve(fixed=(index, value), opts=opts)
            margin = min(margin, face)
    result = CertificateResult(CertificateVerdict.NOT_VIOLATED, minimum, margin)
    if abs(margin) <= tol:
        result.degenerate = True
        result.notes.append('boundary minimum is zero, strict inequality cannot be confirmed')
    return result


def certificate_for(A, image: Image, tol: float = CERT_TOL, opts: Optional[SolverOptions] = None) -> CertificateResult:
    """Certificate on the cosupport and gradient signs of a ground truth image."""
    B = build_gradient(image.lattice)
    cosupport = cosupport_of(image)
    gradient = B @ image.values
    signs = np.sign(gradient[cosupport.complement()])
    result = uniqueness_certificate(A, B, cosupport, signs, tol=tol, opts=opts)
    if np.any(image.values <= 0):
        result.notes.append('image has zero entries, positivity assumption of the condition does not hold')
    return result
