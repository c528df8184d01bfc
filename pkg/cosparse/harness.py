"""
Phase-transition experiments: for every (d, rho) cell draw phantoms, measure
them, recover, and count successes; then locate the empirical transition per
d and scale the theoretical measurement curves to it.
"""

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.optimize import curve_fit
from tqdm import tqdm

from cosparse.bounds import BoundsDomainError, critical_ell
from cosparse.geometry import ProjectionGeometry, parse_scheme, perturb
from cosparse.lattice import Lattice
from cosparse.lpsolve import SolverOptions
from cosparse.phantom import PhantomError, PhantomSpec, generate
from cosparse.recovery import RecoveryMode, RecoveryProblem, recover
from util.configuration import DEFAULT_SEED
from util.csv import csv_to_rows, format_float, rows_to_csv, rows_to_type
from util.misc import stable_seed
from util.storage import Storage

logger = logging.getLogger(__name__)

RHO_BIN = 0.005
DEFAULT_TRIALS = 10
KNOWN_2D_TRIALS = 30
CSV_HEADER = ['d', 'rho', 'trials', 'successes', 'rate']

PRESETS = {
    'desk-2d-3dirs': dict(dim=2, d_values=[40, 60, 80], num_dirs=3, trials_per_cell=10,
                          rho_values=[round(0.01 * i, 3) for i in range(1, 21)]),
    'desk-2d-6dirs': dict(dim=2, d_values=[40, 60, 80], num_dirs=6, trials_per_cell=10,
                          rho_values=[round(0.02 * i, 3) for i in range(1, 21)]),
    'desk-2d-known': dict(dim=2, d_values=[24, 32, 40], num_dirs=3, cosupport_known=True,
                          rho_values=[round(0.02 * i, 3) for i in range(1, 21)]),
    'desk-3d-3dirs': dict(dim=3, d_values=[8, 10, 12], num_dirs=3, trials_per_cell=10,
                          rho_values=[round(0.02 * i, 3) for i in range(1, 21)]),
}


class NoTransitionError(RuntimeError):
    """Raised when a grid shows no success-to-failure crossing for enough d."""


def rho_bin(rho: float) -> int:
    return int(round(rho / RHO_BIN))


class ExperimentPlan(BaseModel):
    dim: int
    d_values: List[int] = Field(min_length=1)
    rho_values: List[float] = Field(min_length=1)
    num_dirs: int
    trials_per_cell: Optional[int] = Field(default=None, ge=1)
    cosupport_known: bool = False
    perturbed: bool = False
    perturbation: str = 'interval:0.9,1.1'
    master_seed: int = DEFAULT_SEED
    eps: Optional[float] = Field(default=None, gt=0)
    background: float = Field(default=0.0, ge=0)
    phantom_tolerance: float = Field(default=0.05, gt=0)

    @field_validator('rho_values')
    @classmethod
    def positive_rho(cls, values):
        if any(rho <= 0 for rho in values):
            raise ValueError('rho values must be positive')
        return sorted(set(values))

    @model_validator(mode='after')
    def achievable(self):
        if self.trials_per_cell is None:
            self.trials_per_cell = KNOWN_2D_TRIALS if self.cosupport_known and self.dim == 2 else DEFAULT_TRIALS
        parse_scheme(self.perturbation)
        for d in self.d_values:
            ProjectionGeometry(self.dim, d, self.num_dirs)
            lattice = Lattice.cube(d, self.dim)
            if max(self.rho_values) * lattice.n > lattice.p:
                raise ValueError(f'rho {max(self.rho_values)} is beyond p/n={lattice.p / lattice.n:.3f} at d={d}')
        return self

    @property
    def mode(self) -> RecoveryMode:
        return RecoveryMode.TV_KNOWN if self.cosupport_known else RecoveryMode.TV_UNKNOWN

    @classmethod
    def load(cls, filename: str) -> 'ExperimentPlan':
        return cls.model_validate(Storage().json_get(filename))

    @classmethod
    def preset(cls, name: str, **overrides) -> 'ExperimentPlan':
        if name not in PRESETS:
            raise KeyError(f'Unknown preset {name!r}, choose from {sorted(PRESETS)}')
        return cls(**{**PRESETS[name], **overrides})


@dataclass
class Cell:
    successes: int = 0
    trials: int = 0
    skipped: int = 0

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else float('nan')

    def merge(self, other: 'Cell'):
        self.successes += other.successes
        self.trials += other.trials
        self.skipped += other.skipped


@dataclass
class PhaseGrid:
    """Success counts per (d, rho bin); skipped trials are kept apart from failures."""

    dim: int
    num_dirs: int
    cosupport_known: bool = False
    cells: Dict[Tuple[int, int], Cell] = field(default_factory=dict)
    annotations: List[str] = field(default_factory=list)
    transitions: Dict[int, float] = field(default_factory=dict)
    alpha: Optional[float] = None

    def record(self, d: int, rho: float, success: Optional[bool], note: str = ''):
        cell = self.cells.setdefault((d, rho_bin(rho)), Cell())
        if success is None:
            cell.skipped += 1
            self.annotations.append(f'd={d} rho={rho:.3f}: {note}')
            return
        cell.trials += 1
        cell.successes += int(success)

    def merge(self, other: 'PhaseGrid'):
        for key, cell in other.cells.items():
            self.cells.setdefault(key, Cell()).merge(cell)
        self.annotations.extend(other.annotations)

    @property
    def d_values(self) -> List[int]:
        return sorted({d for d, _ in self.cells})

    @property
    def bins(self) -> List[int]:
        return sorted({b for _, b in self.cells})

    def series(self, d: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rho, rate, trials) for one d, cells with no completed trial left out."""
        keys = sorted(b for dd, b in self.cells if dd == d and self.cells[(dd, b)].trials)
        rho = np.array([b * RHO_BIN for b in keys])
        rate = np.array([self.cells[(d, b)].rate for b in keys])
        trials = np.array([self.cells[(d, b)].trials for b in keys])
        return rho, rate, trials

    def rows(self) -> List[list]:
        rows = []
        for d, b in sorted(self.cells):
            cell = self.cells[(d, b)]
            rate = format_float(cell.rate, 4) if cell.trials else ''
            rows.append([d, format_float(b * RHO_BIN, 3), cell.trials, cell.successes, rate])
        return rows

    @property
    def complete(self) -> bool:
        return all(cell.skipped == 0 for cell in self.cells.values())

    def to_dict(self) -> dict:
        return {
            'dim': self.dim,
            'num_dirs': self.num_dirs,
            'cosupport_known': self.cosupport_known,
            'cells': [dict(zip(CSV_HEADER, row)) for row in self.rows()],
            'transitions': {str(d): rho for d, rho in sorted(self.transitions.items())},
            'alpha': self.alpha,
            'annotations': self.annotations,
        }


@lru_cache(maxsize=16)
def _projection(dim: int, d: int, num_dirs: int):
    return ProjectionGeometry(dim, d, num_dirs).build()


def _run_cell(args) -> PhaseGrid:
    plan, d, rho, opts = args
    partial = PhaseGrid(plan.dim, plan.num_dirs, plan.cosupport_known)
    A0 = _projection(plan.dim, d, plan.num_dirs)
    for trial in range(plan.trials_per_cell):
        seed = stable_seed(plan.master_seed, d, rho_bin(rho), trial)
        spec = PhantomSpec(dims=(d,) * plan.dim, target_rho=rho, tolerance=plan.phantom_tolerance,
                           background=plan.background, seed=seed)
        try:
            image = generate(spec)
        except PhantomError as e:
            partial.record(d, rho, None, f'trial {trial} phantom unreachable, best rho={e.best_rho:.4f}')
            continue
        A = perturb(A0, stable_seed(seed, 'perturb'), parse_scheme(plan.perturbation)) if plan.perturbed else A0
        result = recover(RecoveryProblem.from_image(A, image, plan.mode), eps=plan.eps, opts=opts)
        if not result.solver.optimal:
            partial.record(d, rho, None, f'trial {trial} solver {result.solver.status.value}')
            continue
        partial.record(d, rho, result.success)
    return partial


def run_plan(plan: ExperimentPlan, workers: int = 1, opts: Optional[SolverOptions] = None,
             verbose: bool = False) -> PhaseGrid:
    """Runs every cell of the plan; identical plans give identical grids for any worker count."""
    tasks = [(plan, d, rho, opts) for d in plan.d_values for rho in plan.rho_values]
    logger.info(f'Phase transition: {len(tasks)} cells x {plan.trials_per_cell} trials on {workers} workers')
    grid = PhaseGrid(plan.dim, plan.num_dirs, plan.cosupport_known)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            partials = list(tqdm(executor.map(_run_cell, tasks), total=len(tasks), disable=not verbose, desc='cells'))
    else:
        partials = [_run_cell(task) for task in tqdm(tasks, disable=not verbose, desc='cells')]
    for partial in partials:
        grid.merge(partial)
    skipped = sum(cell.skipped for cell in grid.cells.values())
    if skipped:
        logger.warning(f'{skipped} trials skipped, see grid annotations')
    return grid


def _logistic(rho, center, width):
    return 1.0 / (1.0 + np.exp(np.clip((rho - center) / width, -500, 500)))


def _crossing(rho: np.ndarray, rate: np.ndarray) -> float:
    """Linear interpolation at the first drop below one half."""
    below = int(np.flatnonzero(rate < 0.5)[0])
    if below == 0:
        return float(rho[0])
    r0, r1 = rate[below - 1], rate[below]
    return float(rho[below - 1] + (r0 - 0.5) / (r0 - r1) * (rho[below] - rho[below - 1]))


def transition_rho(rho: np.ndarray, rate: np.ndarray, trials: Optional[np.ndarray] = None) -> Optional[float]:
    """rho where a logistic fit of success rate crosses 0.5; None without a crossing."""
    rho, rate = np.asarray(rho, dtype=float), np.asarray(rate, dtype=float)
    if rho.size < 2 or np.all(rate >= 0.5) or np.all(rate < 0.5):
        return None
    guess = _crossing(rho, rate)
    spread = float(rho[-1] - rho[0])
    sigma = None
    if trials is not None:
        sigma = 1.0 / np.sqrt(np.asarray(trials, dtype=float))
    try:
        (center, _), _ = curve_fit(_logistic, rho, rate, p0=(guess, spread / 10), sigma=sigma,
                                   bounds=([rho[0], 1e-6], [rho[-1], spread]))
    except (RuntimeError, ValueError) as e:
        logger.debug(f'logistic fit failed ({e}), using interpolated crossing {guess:.4f}')
        return guess
    return float(center)


def theory_rho(dim: int, d: int, num_dirs: int, cosupport_known: bool) -> float:
    """Relative gradient sparsity (p - ell*) / n at which the measurement curve meets m.

    Every projection matrix has one redundant row, so the curve is matched
    against m - 1.
    """
    lattice = Lattice.cube(d, dim)
    m = ProjectionGeometry(dim, d, num_dirs).num_rays()
    ell = critical_ell(dim, lattice.n, m - 1, cosupport_known)
    return (lattice.p - ell) / lattice.n


def transition_points(grid: PhaseGrid) -> Dict[int, float]:
    points = {}
    for d in grid.d_values:
        rho = transition_rho(*grid.series(d))
        if rho is not None:
            points[d] = rho
    grid.transitions = points
    return points


def fit_alpha(grid: PhaseGrid, theory: Optional[str] = None, dim: Optional[int] = None) -> float:
    """Least-squares factor alpha with rho_empirical(d) ~ alpha * rho_theory(d).

    theory is 'known' or 'unknown' and defaults to the grid's own recovery
    mode. A single transition gives alpha = rho_empirical / rho_theory. The
    fitted value is also stored on the grid.
    """
    dim = dim or grid.dim
    known = grid.cosupport_known if theory is None else theory == 'known'
    if theory not in (None, 'known', 'unknown'):
        raise ValueError(f"theory must be 'known' or 'unknown', got {theory!r}")
    points = transition_points(grid)
    fitted, empirical, predicted = [], [], []
    for d, rho in points.items():
        try:
            expected = theory_rho(dim, d, grid.num_dirs, known)
        except BoundsDomainError as e:
            logger.debug(f'd={d} has no theoretical value: {e}')
            continue
        if expected > 0:
            fitted.append(d)
            empirical.append(rho)
            predicted.append(expected)
    if not empirical:
        raise NoTransitionError('No d shows a success to failure crossing')
    if len(empirical) == 1:
        logger.warning(f'alpha from a single transition at d={fitted[0]}')
    empirical, predicted = np.array(empirical), np.array(predicted)
    grid.alpha = float(empirical @ predicted / (predicted @ predicted))
    logger.info(f'alpha={grid.alpha:.4f} from {len(empirical)} transitions')
    return grid.alpha


def monotone_violations(grid: PhaseGrid, z: float = 2.0) -> List[Tuple[int, float]]:
    """(d, rho) where the success rate rises over the previous bin by more than z sigma."""
    violations = []
    for d in grid.d_values:
        rho, rate, trials = grid.series(d)
        for i in range(1, rho.size):
            pooled = (rate[i] * trials[i] + rate[i - 1] * trials[i - 1]) / (trials[i] + trials[i - 1])
            sigma = math.sqrt(max(pooled * (1 - pooled), 1e-12) * (1 / trials[i] + 1 / trials[i - 1]))
            if rate[i] - rate[i - 1] > z * sigma:
                violations.append((d, float(rho[i])))
    return violations


def _edges(centers: np.ndarray, default: float) -> np.ndarray:
    if centers.size == 1:
        return np.array([centers[0] - default / 2, centers[0] + default / 2])
    middle = (centers[1:] + centers[:-1]) / 2
    return np.concatenate([[2 * centers[0] - middle[0]], middle, [2 * centers[-1] - middle[-1]]])


def _figure(grid: PhaseGrid):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    if not grid.cells:
        ax.set_axis_off()
        return fig
    d_values = np.array(grid.d_values, dtype=float)
    bins = grid.bins
    rates = np.full((len(bins), d_values.size), np.nan)
    for (d, b), cell in grid.cells.items():
        if cell.trials:
            rates[bins.index(b), grid.d_values.index(d)] = cell.rate
    rho = np.array(bins) * RHO_BIN
    ax.pcolormesh(_edges(d_values, 1.0), _edges(rho, RHO_BIN), np.ma.masked_invalid(rates),
                  cmap='gray', vmin=0.0, vmax=1.0, shading='flat')
    for known, color in ((False, 'green'), (True, 'red')):
        xs, ys = [], []
        for d in range(int(d_values[0]), int(d_values[-1]) + 1):
            try:
                ys.append(theory_rho(grid.dim, d, grid.num_dirs, known) * (grid.alpha or 1.0))
                xs.append(d)
            except (BoundsDomainError, ValueError):
                continue
        if xs:
            ax.plot(xs, ys, color=color, linewidth=1.5, label='known' if known else 'unknown')
    ax.set_ylim(rho[0] - RHO_BIN / 2, rho[-1] + RHO_BIN / 2)
    ax.set_xlabel('d')
    ax.set_ylabel('rho')
    ax.set_title(f'{grid.dim}D, {grid.num_dirs} directions, '
                 f'{"known" if grid.cosupport_known else "unknown"} cosupport')
    return fig


def emit(grid: PhaseGrid, prefix: str, storage: Optional[Storage] = None) -> Tuple[str, str]:
    """Writes <prefix>.csv and <prefix>.svg (black is 0% recovery, white 100%)."""
    storage = storage or Storage()
    csv_path = storage.object_put(prefix + '.csv', rows_to_csv([CSV_HEADER] + grid.rows()).read())
    fig = _figure(grid)
    buffer = io.StringIO()
    try:
        fig.savefig(buffer, format='svg')
    finally:
        plt.close(fig)
    svg_path = storage.object_put(prefix + '.svg', buffer.getvalue())
    logger.info(f'Wrote {csv_path} and {svg_path}')
    return csv_path, svg_path


def load_grid(filename: str, dim: int, num_dirs: int, cosupport_known: bool = False,
              storage: Optional[Storage] = None) -> PhaseGrid:
    """Rebuilds a grid from a CSV written by emit, skipped counts are not stored there."""
    storage = storage or Storage()
    rows = list(rows_to_type(csv_to_rows(storage.object_get(filename))))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f'{filename} does not start with the header {",".join(CSV_HEADER)}')
    grid = PhaseGrid(dim, num_dirs, cosupport_known)
    for d, rho, trials, successes, _ in rows[1:]:
        grid.cells[(d, rho_bin(rho))] = Cell(successes=successes, trials=trials)
    return grid
