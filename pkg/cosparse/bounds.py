"""
Cosparsity calculus on regular grids: upper bounds on the dimension of
cosparse subspaces, edge isoperimetric bounds and the number of measurements
they imply.

All closed forms assume a cubic grid V = [q]_0^dim with n = q**dim vertices.
The dimension bounds hold only above a minimal cosparsity (4 edges in 2D, 54
in 3D); below it every function here raises BoundsDomainError.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import brentq
from tqdm import tqdm

from cosparse.lattice import Lattice, random_cosupport, subspace_dim

logger = logging.getLogger(__name__)

MIN_ELL = {2: 4, 3: 54}


class BoundsDomainError(ValueError):
    """Raised when a bound is evaluated outside the range it is stated for."""


def _check_dim(dim: int):
    if dim not in MIN_ELL:
        raise BoundsDomainError(f'Bounds are stated for dim 2 or 3, got {dim}')


def _check_ell(dim: int, ell: float):
    _check_dim(dim)
    if ell <= MIN_ELL[dim]:
        raise BoundsDomainError(f'Bound for dim={dim} needs ell > {MIN_ELL[dim]}, got {ell}')


def _interior_term(dim: int, ell: float) -> float:
    """Lower bound on |V(Lambda)| - 1 in the simplified form used by the bounds."""
    if dim == 2:
        return 0.5 * (ell + math.sqrt(2 * ell + 1) - 1)
    return (ell + np.cbrt(3 * ell * ell) + 2 * np.cbrt(ell / 3) - 2) / 3


def kappa_upper(dim: int, n: int, ell: float) -> float:
    """Upper bound on the largest cosparse subspace dimension at cosparsity ell."""
    _check_ell(dim, ell)
    if dim == 2:
        return n - 0.5 * (ell + math.sqrt(1 + 2 * ell)) + 0.5
    return n - (ell + np.cbrt(3 * ell * ell) + 2 * np.cbrt(ell / 3)) / 3 + 2 / 3


def _t(ell: float) -> float:
    return np.cbrt(2 + 6 * ell + 3 * ell * ell + math.sqrt((4 + 9 * ell) * ell ** 3))


def s_of_ell(dim: int, ell: float) -> float:
    """Vertex count s whose isoperimetric bound dim*s*(1 - s**(-1/dim)) equals ell."""
    _check_dim(dim)
    if ell < 0:
        raise BoundsDomainError(f'Cosparsity must be nonnegative, got {ell}')
    if dim == 2:
        return 0.5 * (1 + ell + math.sqrt(1 + 2 * ell))
    t = _t(ell)
    c = 2 ** (1 / 3)
    return (c * (1 + 2 * ell) / t + 1 + ell + t / c) / 3


def s_lower_bound(ell: float) -> float:
    """Asymptotic lower bound on the 3D s(ell), accurate up to O(ell**(-1/3))."""
    return (1 + ell + np.cbrt(3 * ell * ell) + 2 * np.cbrt(ell / 3)) / 3


def isoperimetric_ell(dim: int, s: float) -> float:
    return dim * s * (1 - s ** (-1 / dim))


def bollobas_bound(q: int, d: int, s: int) -> float:
    """Edge isoperimetric bound on |Int_e(S)| for |S| = s in [q]_0^d."""
    if q < 3 or d < 2:
        raise BoundsDomainError(f'Bound needs q >= 3 and d >= 2, got q={q}, d={d}')
    total = q ** d
    if not 1 <= s <= total:
        raise BoundsDomainError(f'Set size must lie in [1, {total}], got {s}')
    first = d * s * (1 - s ** (-1 / d))
    second = d * total * (1 - 1 / q) * (1 - (1 - s / total) ** (1 - 1 / d))
    return max(first, second)


def curve_rhs(dim: int, n: int, ell: float, cosupport_known: bool) -> float:
    """Right-hand side of the measurement count inequality for uniqueness."""
    _check_ell(dim, ell)
    term = _interior_term(dim, ell)
    return n - term if cosupport_known else 2 * n - 2 * term


def measurement_threshold(dim: int, n: int, ell: float, cosupport_known: bool) -> int:
    """Smallest row count m predicted to give uniqueness.

    One row is added to the real bound: every projection direction measures
    the total mass, so measurements always carry one redundant row.
    """
    return int(math.ceil(curve_rhs(dim, n, ell, cosupport_known) + 1))


def critical_ell(dim: int, n: int, m: float, cosupport_known: bool) -> float:
    """Cosparsity at which the curve equals m, the smallest ell predicted to suffice.

    Returns the lowest valid cosparsity when m already exceeds the curve there.
    """
    _check_dim(dim)
    lower = MIN_ELL[dim] + 1e-9
    if curve_rhs(dim, n, lower, cosupport_known) <= m:
        return lower
    upper = 4.0 * n + 100
    while curve_rhs(dim, n, upper, cosupport_known) > m:
        upper *= 2
    return float(brentq(lambda ell: curve_rhs(dim, n, ell, cosupport_known) - m, lower, upper, xtol=1e-10))


class BoundReport(BaseModel):
    dim: int
    d: int
    n: int
    p: int
    ell: int
    k: int
    s: float
    kappa_upper: float
    rhs_known: float
    rhs_unknown: float
    m_known: int
    m_unknown: int


def report(dim: int, d: int, ell: int) -> BoundReport:
    lattice = Lattice.cube(d, dim)
    if not 0 <= ell <= lattice.p:
        raise BoundsDomainError(f'Cosparsity must lie in [0, {lattice.p}], got {ell}')
    n = lattice.n
    return BoundReport(
        dim=dim,
        d=d,
        n=n,
        p=lattice.p,
        ell=ell,
        k=lattice.p - ell,
        s=s_of_ell(dim, ell),
        kappa_upper=kappa_upper(dim, n, ell),
        rhs_known=curve_rhs(dim, n, ell, True),
        rhs_unknown=curve_rhs(dim, n, ell, False),
        m_known=measurement_threshold(dim, n, ell, True),
        m_unknown=measurement_threshold(dim, n, ell, False),
    )


def kappa_empirical(lattice: Lattice, ell: int, trials: int, seed: int) -> float:
    """Mean subspace dimension over random cosupports of size ell.

    Trial t draws from the t-th child stream of SeedSequence(seed), so any
    subset of trials can be recomputed independently.
    """
    streams = np.random.SeedSequence(seed).spawn(trials)
    dims = [subspace_dim(random_cosupport(lattice, ell, np.random.default_rng(s))) for s in streams]
    return float(np.mean(dims))


def _kappa_row(args) -> Tuple[int, float, Optional[float]]:
    lattice, ell, trials, seed = args
    mean = kappa_empirical(lattice, ell, trials, seed)
    bound = kappa_upper(lattice.ndim, lattice.n, ell) if ell > MIN_ELL.get(lattice.ndim, math.inf) else None
    return ell, mean, bound


def kappa_curve(lattice: Lattice, ells: Iterable[int], trials: int, seed: int, workers: int = 1,
                verbose: bool = False) -> List[Tuple[int, float, Optional[float]]]:
    """Rows (ell, mean dim W, bound) with bound None where it is not stated."""
    tasks = [(lattice, int(ell), trials, seed + index) for index, ell in enumerate(ells)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(tqdm(executor.map(_kappa_row, tasks), total=len(tasks), disable=not verbose, desc='kappa'))
    else:
        rows = [_kappa_row(task) for task in tqdm(tasks, disable=not verbose, desc='kappa')]
    logger.debug(f'kappa curve: {len(rows)} cosparsity values, {trials} trials each')
    return rows
