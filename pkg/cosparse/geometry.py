"""
Binary and perturbed projection matrices for few-angle parallel beam setups.

A ray along integer direction (a, b) through pixel (i, j) is identified by the
invariant b*i - a*j. Unit directions give one ray per invariant value; the
(1, +-2) and (2, +-1) directions group two adjacent digital lines per ray so
every pixel still meets exactly one ray per direction.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
import scipy.sparse as sps

from util.storage import Storage

logger = logging.getLogger(__name__)

DIRECTIONS_2D = (
    (0, 1),
    (1, 0),
    (1, 1),
    (1, -1),
    (1, 2),
    (1, -2),
    (2, 1),
    (2, -1),
)

AXES_3D = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
DIAGONALS_3D = ((1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1))


class GeometryError(ValueError):
    """Raised for unsupported grid sizes, direction counts or perturbations."""


@dataclass(frozen=True)
class ProjectionGeometry:
    dim: int
    d: int
    num_dirs: int

    def __post_init__(self):
        if self.dim == 2:
            if self.d < 4:
                raise GeometryError(f'2D projections need d >= 4, got {self.d}')
            if not 3 <= self.num_dirs <= 8:
                raise GeometryError(f'2D projections use 3 to 8 directions, got {self.num_dirs}')
        elif self.dim == 3:
            if self.d < 2:
                raise GeometryError(f'3D projections need d >= 2, got {self.d}')
            if self.num_dirs not in (3, 4):
                raise GeometryError(f'3D projections use 3 or 4 directions, got {self.num_dirs}')
        else:
            raise GeometryError(f'Dimension must be 2 or 3, got {self.dim}')

    @property
    def n(self) -> int:
        return self.d ** self.dim

    @property
    def directions(self) -> List[Tuple[int, ...]]:
        if self.dim == 2:
            return list(DIRECTIONS_2D[:self.num_dirs])
        return list(AXES_3D if self.num_dirs == 3 else DIAGONALS_3D)

    def rays_per_direction(self) -> List[int]:
        d = self.d
        if self.dim == 3:
            return [d * d] * 3 if self.num_dirs == 3 else [d * (2 * d - 1)] * 4
        counts = []
        for a, b in self.directions:
            if 2 in (abs(a), abs(b)):
                counts.append(d + d // 2)
            elif a == 0 or b == 0:
                counts.append(d)
            else:
                counts.append(2 * d - 1)
        return counts

    def num_rays(self) -> int:
        """Row count m, the closed forms of the 2D table and the 3D captions."""
        return sum(self.rays_per_direction())

    def build(self) -> sps.csr_matrix:
        if self.dim == 2:
            return build_projection_2d(self.d, self.num_dirs)
        return build_projection_3d(self.d, self.num_dirs)


def _ray_index_2d(d: int, direction: Tuple[int, int]) -> np.ndarray:
    i, j = np.meshgrid(np.arange(d), np.arange(d), indexing='ij')
    a, b = direction
    c = (b * i - a * j).ravel()
    if 2 in (abs(a), abs(b)):
        return (c - c.min() + 1) // 2
    return c - c.min()


def _ray_index_3d(d: int, direction: Tuple[int, int, int]) -> np.ndarray:
    i, j, k = (axis.ravel() for axis in np.meshgrid(np.arange(d), np.arange(d), np.arange(d), indexing='ij'))
    if direction in AXES_3D:
        free = [c for c, step in zip((i, j, k), direction) if step == 0]
        return free[0] * d + free[1]
    # face diagonal (1, s1, s2) with one zero step: (i - s*x, other axis)
    _, s1, s2 = direction
    if s1:
        first, other = i - s1 * j, k
    else:
        first, other = i - s2 * k, j
    return (first - first.min()) * d + other


def _assemble(ray_blocks: List[np.ndarray], counts: List[int], n: int) -> sps.csr_matrix:
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rows = np.concatenate([offset + block for offset, block in zip(offsets, ray_blocks)])
    cols = np.tile(np.arange(n), len(ray_blocks))
    A = sps.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(int(sum(counts)), n))
    A.sum_duplicates()
    A.sort_indices()
    return A


def build_projection_2d(d: int, num_dirs: int) -> sps.csr_matrix:
    """Binary d*d image projection matrix, rows grouped by direction.

    Args:
        d: image side length, at least 4.
        num_dirs: number of directions taken in table order, 3 to 8.

    Returns:
        csr matrix of shape (m, d*d) with exactly num_dirs ones per column.
    """
    geometry = ProjectionGeometry(2, d, num_dirs)
    blocks = [_ray_index_2d(d, direction) for direction in geometry.directions]
    A = _assemble(blocks, geometry.rays_per_direction(), geometry.n)
    logger.debug(f'Built 2D projection d={d} dirs={num_dirs} shape={A.shape}')
    return A


def build_projection_3d(d: int, num_dirs: int) -> sps.csr_matrix:
    geometry = ProjectionGeometry(3, d, num_dirs)
    blocks = [_ray_index_3d(d, direction) for direction in geometry.directions]
    A = _assemble(blocks, geometry.rays_per_direction(), geometry.n)
    logger.debug(f'Built 3D projection d={d} dirs={num_dirs} shape={A.shape}')
    return A


@dataclass(frozen=True)
class IntervalScheme:
    lo: float = 0.9
    hi: float = 1.1


@dataclass(frozen=True)
class EpsilonScheme:
    eps: float = 0.1


PerturbScheme = Union[IntervalScheme, EpsilonScheme]


def parse_scheme(text: str) -> PerturbScheme:
    """Parses 'interval:LO,HI' or 'epsilon:EPS'."""
    kind, _, args = text.partition(':')
    try:
        if kind == 'interval':
            lo, hi = (float(v) for v in args.split(','))
            return IntervalScheme(lo, hi)
        if kind == 'epsilon':
            return EpsilonScheme(float(args))
    except ValueError as e:
        raise GeometryError(f'Cannot parse perturbation {text!r}: {e}') from e
    raise GeometryError(f'Unknown perturbation scheme {kind!r}')


def perturb(A: sps.spmatrix, seed: int, scheme: PerturbScheme = IntervalScheme()) -> sps.csr_matrix:
    """Redraws the nonzeros of A, keeping its sparsity pattern.

    Interval: every nonzero becomes an independent uniform draw in (lo, hi).
    Epsilon: every nonzero moves uniformly by at most eps, then each column
    is scaled to unit Euclidean norm.
    """
    P = sps.csr_matrix(A, copy=True)
    P.eliminate_zeros()
    P.sort_indices()
    if np.any(P.data < 0):
        raise GeometryError('Only nonnegative matrices can be perturbed')
    rng = np.random.default_rng(seed)

    if isinstance(scheme, IntervalScheme):
        if scheme.lo > scheme.hi:
            raise GeometryError(f'Interval bounds reversed: ({scheme.lo}, {scheme.hi})')
        if scheme.lo <= 0:
            raise GeometryError(f'Interval must be positive to keep the pattern, got lo={scheme.lo}')
        if scheme.lo == scheme.hi:
            P.data = np.full(P.nnz, float(scheme.lo))
        else:
            P.data = rng.uniform(scheme.lo, scheme.hi, size=P.nnz)
        return P

    if isinstance(scheme, EpsilonScheme):
        if P.nnz and not 0 <= scheme.eps < P.data.min():
            raise GeometryError(f'Epsilon must lie in [0, {P.data.min()}), got {scheme.eps}')
        P.data = P.data + rng.uniform(-scheme.eps, scheme.eps, size=P.nnz)
        norms = np.sqrt(np.asarray(P.multiply(P).sum(axis=0))).ravel()
        norms[norms == 0] = 1.0
        P = sps.csr_matrix(P @ sps.diags(1.0 / norms))
        P.sort_indices()
        return P

    raise GeometryError(f'Unknown perturbation scheme {scheme!r}')


def project(A: sps.spmatrix, values: np.ndarray) -> np.ndarray:
    """Noiseless measurements b = A u."""
    values = np.asarray(values, dtype=float).ravel()
    if A.shape[1] != values.size:
        raise GeometryError(f'Matrix has {A.shape[1]} columns, image has {values.size} values')
    return np.asarray(A @ values).ravel()


def save_matrix(A: sps.spmatrix, filename: str, comment: str = '') -> str:
    return Storage().matrix_put(filename, A, comment=comment)


def load_matrix(filename: str) -> sps.csr_matrix:
    return Storage().matrix_get(filename)
