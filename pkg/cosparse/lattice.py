"""
Regular grid graphs, the discrete gradient and cosupport combinatorics.

Vertices of a lattice with dims (n1, n2[, n3]) are numbered row-major with the
first axis slowest, which is the numbering the Kronecker stacking of the
gradient operator assumes. Edges are numbered axis by axis, row-major within
each axis block, so edge r is always row r of the gradient.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

# default zero test for gradients of floating point images
FLOAT_ZERO_TOL = 1e-10

# exhaustive edge interior search enumerates 2**n subsets
MAX_EXHAUSTIVE_VERTICES = 20


class LatticeError(ValueError):
    """Raised for invalid lattice parameters or out of range indices."""


@dataclass(frozen=True)
class Lattice:
    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not 1 <= len(dims) <= 3:
            raise LatticeError(f'Lattice must have 1 to 3 axes, got {len(dims)}')
        if any(n < 1 for n in dims):
            raise LatticeError(f'Lattice dims must be positive, got {dims}')
        object.__setattr__(self, 'dims', dims)

    @classmethod
    def cube(cls, d: int, ndim: int) -> 'Lattice':
        return cls((d,) * ndim)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def p(self) -> int:
        return sum(self.n // n_axis * (n_axis - 1) for n_axis in self.dims)

    @property
    def is_cubic(self) -> bool:
        return len(set(self.dims)) == 1

    @cached_property
    def edge_list(self) -> np.ndarray:
        """(p, 2) array of vertex pairs, lower endpoint first."""
        index = np.arange(self.n).reshape(self.dims)
        blocks = []
        for axis, n_axis in enumerate(self.dims):
            lower = np.take(index, np.arange(n_axis - 1), axis=axis).ravel()
            upper = np.take(index, np.arange(1, n_axis), axis=axis).ravel()
            blocks.append(np.stack([lower, upper], axis=1))
        edges = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, 2), dtype=int)
        edges.setflags(write=False)
        return edges

    @cached_property
    def edge_axes(self) -> np.ndarray:
        """Axis of every edge, aligned with edge_list."""
        counts = [self.n // n_axis * (n_axis - 1) for n_axis in self.dims]
        return np.repeat(np.arange(self.ndim), counts)

    def vertex_index(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def vertex_coords(self, index) -> np.ndarray:
        """Coordinates of one vertex, or (len, ndim) array for many."""
        coords = np.unravel_index(np.asarray(index), self.dims)
        return np.stack(coords, axis=-1)


@dataclass(frozen=True, eq=False)
class Image:
    lattice: Lattice
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.lattice.n:
            raise LatticeError(f'Image has {values.size} values, lattice has {self.lattice.n} vertices')
        if np.any(values < 0):
            raise LatticeError('Image values must be nonnegative')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def gradient(self) -> np.ndarray:
        return build_gradient(self.lattice) @ self.values

    def default_tol(self) -> float:
        return 0.0 if np.all(self.values == np.round(self.values)) else FLOAT_ZERO_TOL

    def gradient_sparsity(self, tol: Optional[float] = None) -> int:
        """k = number of edges whose gradient exceeds tol."""
        tol = self.default_tol() if tol is None else tol
        return int(np.count_nonzero(np.abs(self.gradient()) > tol))

    def cosparsity(self, tol: Optional[float] = None) -> int:
        return self.lattice.p - self.gradient_sparsity(tol)

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.lattice.dims)


@dataclass(frozen=True, eq=False)
class Cosupport:
    lattice: Lattice
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        edges = np.unique(np.asarray(self.edges, dtype=np.int64).ravel())
        if edges.size and (edges[0] < 0 or edges[-1] >= self.lattice.p):
            raise LatticeError(f'Cosupport indices must lie in [0, {self.lattice.p})')
        edges.setflags(write=False)
        object.__setattr__(self, 'edges', edges)

    @property
    def ell(self) -> int:
        return int(self.edges.size)

    def complement(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.lattice.p), self.edges, assume_unique=True)

    def covered_vertices(self) -> np.ndarray:
        return np.unique(self.lattice.edge_list[self.edges])

    def __contains__(self, edge: int) -> bool:
        position = np.searchsorted(self.edges, edge)
        return position < self.edges.size and self.edges[position] == edge

    def issubset(self, other: 'Cosupport') -> bool:
        return bool(np.all(np.isin(self.edges, other.edges)))

    def to_json(self) -> str:
        return json.dumps([int(e) for e in self.edges])

    @classmethod
    def from_json(cls, lattice: Lattice, text: str) -> 'Cosupport':
        return cls(lattice, np.array(json.loads(text), dtype=np.int64))


@lru_cache(maxsize=32)
def _gradient(dims: Tuple[int, ...]) -> sps.csr_matrix:
    blocks = []
    for axis, n_axis in enumerate(dims):
        derivative = sps.diags([-np.ones(n_axis - 1), np.ones(n_axis - 1)], [0, 1],
                               shape=(n_axis - 1, n_axis))
        factors = [sps.identity(n, format='csr') for n in dims]
        factors[axis] = derivative
        block = factors[0]
        for factor in factors[1:]:
            block = sps.kron(block, factor, format='csr')
        blocks.append(block)
    gradient = sps.vstack(blocks, format='csr')
    gradient.eliminate_zeros()
    gradient.sort_indices()
    return gradient


def build_gradient(lattice: Lattice) -> sps.csr_matrix:
    """Discrete gradient as the Kronecker stack of 1D forward differences.

    Row r carries -1 at edge_list[r][0] and +1 at edge_list[r][1]. The
    returned matrix is shared between callers and must not be modified.
    """
    return _gradient(lattice.dims)


def tv(image: Image) -> float:
    """Anisotropic total variation ||grad u||_1."""
    return float(np.abs(image.gradient()).sum())


def cosupport_of(image: Image, tol: Optional[float] = None) -> Cosupport:
    tol = image.default_tol() if tol is None else tol
    if tol < 0:
        raise LatticeError(f'Tolerance must be nonnegative, got {tol}')
    return Cosupport(image.lattice, np.flatnonzero(np.abs(image.gradient()) <= tol))


def subspace_dim(cosupport: Cosupport) -> int:
    """dim N(grad_Lambda) = |V| - |V(Lambda)| + components of V(Lambda).

    Vertices outside V(Lambda) are singleton components of the graph (V,
    Lambda), so the sum equals the component count of that graph.
    """
    lattice = cosupport.lattice
    edges = lattice.edge_list[cosupport.edges]
    adjacency = sps.coo_matrix(
        (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(lattice.n, lattice.n))
    count, _ = connected_components(adjacency, directed=False)
    return int(count)


def cube_weight(coords: Sequence[int], ndim: int) -> int:
    """w(v) = sum_i 2**(i + ndim * v_i) with axes counted from 1."""
    return sum(1 << (axis + ndim * int(v)) for axis, v in enumerate(coords, start=1))


def cube_order(lattice: Lattice) -> np.ndarray:
    """All vertex indices sorted by cube weight."""
    if not lattice.is_cubic:
        raise LatticeError(f'Cube order needs equal dims, got {lattice.dims}')
    coords = lattice.vertex_coords(np.arange(lattice.n))
    weights = [cube_weight(c, lattice.ndim) for c in coords]
    return np.array(sorted(range(lattice.n), key=weights.__getitem__), dtype=np.int64)


def cube_order_prefix(lattice: Lattice, s: int) -> np.ndarray:
    if not 1 <= s <= lattice.n:
        raise LatticeError(f'Prefix size must lie in [1, {lattice.n}], got {s}')
    return cube_order(lattice)[:s]


def edge_interior(lattice: Lattice, vertex_set: Iterable[int]) -> Cosupport:
    members = np.zeros(lattice.n, dtype=bool)
    members[np.asarray(list(vertex_set), dtype=np.int64)] = True
    edges = lattice.edge_list
    return Cosupport(lattice, np.flatnonzero(members[edges[:, 0]] & members[edges[:, 1]]))


def max_edge_interior(lattice: Lattice) -> np.ndarray:
    """Exhaustive max |Int_e(S)| over all subsets S of each size s = 0..n.

    Enumerates all 2**n vertex subsets as bit masks, so only usable for tiny
    lattices.
    """
    n = lattice.n
    if n > MAX_EXHAUSTIVE_VERTICES:
        raise LatticeError(f'Exhaustive search limited to {MAX_EXHAUSTIVE_VERTICES} vertices, got {n}')
    masks = np.arange(1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(np.int8)
    sizes = bits.sum(axis=1)
    edges = lattice.edge_list
    interior = (bits[:, edges[:, 0]] & bits[:, edges[:, 1]]).sum(axis=1)
    best = np.zeros(n + 1, dtype=np.int64)
    np.maximum.at(best, sizes, interior)
    return best


def random_cosupport(lattice: Lattice, ell: int, rng: np.random.Generator) -> Cosupport:
    if not 0 <= ell <= lattice.p:
        raise LatticeError(f'Cosparsity must lie in [0, {lattice.p}], got {ell}')
    return Cosupport(lattice, rng.choice(lattice.p, size=ell, replace=False))


def vertex_set_to_json(vertex_set: Iterable[int]) -> str:
    return json.dumps(sorted(int(v) for v in vertex_set))


def vertex_set_from_json(text: str) -> List[int]:
    return [int(v) for v in json.loads(text)]
