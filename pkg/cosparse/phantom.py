"""
Piecewise constant test images: random axis-aligned ellipses / ellipsoids at
a prescribed relative gradient sparsity rho = k / n, and a layered phantom
resembling the Shepp-Logan head.
"""

import logging
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from cosparse.lattice import Image, Lattice
from util.storage import Storage

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.25, 0.5, 0.75, 1.0)

# (center, semi-axes, intensity) in [-1, 1]^3, painted in order
HEAD_LAYERS = (
    ((0.0, 0.0, 0.0), (0.69, 0.92, 0.81), 1.0),
    ((0.0, -0.0184, 0.0), (0.6624, 0.874, 0.78), 0.2),
    ((0.22, 0.0, 0.0), (0.11, 0.31, 0.22), 0.05),
    ((-0.22, 0.0, 0.0), (0.16, 0.41, 0.28), 0.08),
    ((0.0, 0.35, -0.15), (0.21, 0.25, 0.41), 0.3),
    ((0.0, 0.1, 0.25), (0.046, 0.046, 0.05), 0.4),
    ((0.0, -0.1, 0.25), (0.046, 0.046, 0.05), 0.35),
    ((-0.08, -0.605, 0.0), (0.046, 0.023, 0.05), 0.45),
    ((0.0, -0.605, 0.0), (0.023, 0.023, 0.02), 0.5),
    ((0.06, -0.605, 0.0), (0.023, 0.046, 0.02), 0.25),
)


class PhantomError(RuntimeError):
    """Raised when no drawn phantom reaches the target rho within tolerance."""

    def __init__(self, message: str, best_rho: float):
        super().__init__(message)
        self.best_rho = best_rho


class PhantomSpec(BaseModel):
    dims: Tuple[int, ...]
    target_rho: float = Field(gt=0)
    tolerance: float = Field(default=0.05, gt=0)
    intensity_levels: Tuple[float, ...] = DEFAULT_LEVELS
    background: float = Field(default=0.0, ge=0)
    max_shapes: int = Field(default=5000, ge=1)
    max_redraws: int = Field(default=20, ge=1)
    radius_range: Tuple[float, float] = (1 / 20, 1 / 4)
    seed: int = 0

    @field_validator('intensity_levels')
    @classmethod
    def positive_levels(cls, levels):
        if not levels or any(level <= 0 for level in levels):
            raise ValueError('intensity levels must be positive and non-empty')
        return levels

    @model_validator(mode='after')
    def reachable(self):
        lattice = self.lattice
        if self.target_rho * lattice.n > lattice.p:
            raise ValueError(f'target rho {self.target_rho} needs more than p={lattice.p} gradient entries')
        return self

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.dims)


def gradient_count(grid: np.ndarray) -> int:
    return int(sum(np.count_nonzero(np.diff(grid, axis=axis)) for axis in range(grid.ndim)))


def _ellipsoid_mask(dims, center, radii) -> np.ndarray:
    axes = np.meshgrid(*[np.arange(n) + 0.5 for n in dims], indexing='ij', sparse=True)
    total = sum(((x - c) / r) ** 2 for x, c, r in zip(axes, center, radii))
    return total <= 1.0


def _draw(spec: PhantomSpec, rng: np.random.Generator):
    dims = np.array(spec.dims, dtype=float)
    lo, hi = spec.radius_range
    center = rng.uniform(0, dims)
    radii = rng.uniform(lo * dims, hi * dims)
    level = float(rng.choice(spec.intensity_levels))
    return center, radii, level


def generate(spec: PhantomSpec) -> Image:
    """Random ellipses / ellipsoids painted until rho is within tolerance of the target.

    A shape that would push rho above the tolerance band is rejected and
    another one drawn. After max_shapes draws without success a fresh
    sequence is started. Raises PhantomError carrying the best rho seen.
    """
    lattice = spec.lattice
    n = lattice.n
    target_k = spec.target_rho * n
    if target_k < 1:
        logger.debug(f'target k={target_k:.3f} below one edge, returning constant image')
        return Image(lattice, np.full(n, spec.background))

    ceiling = spec.target_rho * (1 + spec.tolerance)
    best_rho, best_error = 0.0, np.inf
    for attempt in range(spec.max_redraws):
        rng = np.random.default_rng((spec.seed, attempt))
        grid = np.full(spec.dims, spec.background)
        for _ in range(spec.max_shapes):
            center, radii, level = _draw(spec, rng)
            candidate = grid.copy()
            candidate[_ellipsoid_mask(spec.dims, center, radii)] = level
            rho = gradient_count(candidate) / n
            error = abs(rho - spec.target_rho) / spec.target_rho
            if error < best_error:
                best_rho, best_error = rho, error
            if error <= spec.tolerance:
                logger.debug(f'phantom attempt {attempt}: rho={rho:.4f} target={spec.target_rho}')
                return Image(lattice, candidate.ravel())
            if rho < ceiling:
                grid = candidate

    raise PhantomError(
        f'No phantom within {spec.tolerance:.0%} of rho={spec.target_rho} after {spec.max_redraws} draws,'
        f' best rho={best_rho:.4f}', best_rho)


def shepp_logan_like(lattice: Lattice, layers: int = len(HEAD_LAYERS)) -> Image:
    """Nested ellipsoid head phantom using the first `layers` table entries.

    2D lattices use the central slice of the table.
    """
    if lattice.ndim not in (2, 3):
        raise ValueError(f'Head phantom needs a 2D or 3D lattice, got {lattice.ndim}D')
    if not 0 <= layers <= len(HEAD_LAYERS):
        raise ValueError(f'layers must lie in [0, {len(HEAD_LAYERS)}], got {layers}')
    dims = np.array(lattice.dims, dtype=float)
    grid = np.zeros(lattice.dims)
    for center, semi_axes, level in HEAD_LAYERS[:layers]:
        center = np.array(center[:lattice.ndim])
        semi_axes = np.array(semi_axes[:lattice.ndim])
        grid[_ellipsoid_mask(lattice.dims, (center + 1) * dims / 2, semi_axes * dims / 2)] = level
    image = Image(lattice, grid.ravel())
    logger.info(f'Head phantom {lattice.dims} with {layers} layers: k={image.gradient_sparsity()} '
                f'ell={image.cosparsity()}')
    return image


def rho_of(image: Image) -> float:
    return image.gradient_sparsity() / image.lattice.n


def save_image(image: Image, prefix: str, **metadata) -> str:
    return Storage().array_put(
        prefix,
        image.as_grid(),
        dims=list(image.lattice.dims),
        k=image.gradient_sparsity(),
        ell=image.cosparsity(),
        **metadata)


def load_image(prefix: str) -> Tuple[Image, Dict]:
    values, sidecar = Storage().array_get(prefix)
    return Image(Lattice(tuple(sidecar['dims'])), values.ravel()), sidecar
