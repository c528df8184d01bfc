#!/usr/bin/env python3
"""
Cosparse Tomography - projection matrices, diagnostics, bounds, phantoms,
TV recovery and phase-transition sweeps from one command line
"""

import argparse
import json
import logging
import os
import sys

from pydantic import ValidationError
from tabulate import tabulate

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cosparse.analysis import AnalysisError, BudgetExceededError, diagnose
from cosparse.bounds import BoundsDomainError, kappa_curve, report
from cosparse.geometry import GeometryError, ProjectionGeometry, load_matrix, parse_scheme, perturb, save_matrix
from cosparse.harness import ExperimentPlan, NoTransitionError, emit, fit_alpha, load_grid, run_plan
from cosparse.lattice import Lattice, LatticeError, build_gradient
from cosparse.lpsolve import LPDataError, LPDimensionError, SolverOptions
from cosparse.phantom import PhantomError, PhantomSpec, generate, load_image, save_image, shepp_logan_like
from cosparse.recovery import RecoveryError, RecoveryMode, RecoveryProblem, certificate_for, recover
from util.configuration import Configuration
from util.csv import format_float, rows_to_csv

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (
    AnalysisError, BudgetExceededError, BoundsDomainError, GeometryError, LatticeError, LPDataError,
    LPDimensionError, NoTransitionError, PhantomError, RecoveryError, ValidationError, OSError, KeyError, ValueError,
)


def print_json(document):
    print(json.dumps(document, indent=2, sort_keys=True))


def cmd_build_matrix(args, config):
    geometry = ProjectionGeometry(args.dim, args.d, args.dirs)
    A = geometry.build()
    comment = f'{args.dim}D d={args.d} dirs={args.dirs}'
    if args.perturb:
        A = perturb(A, config.seed, parse_scheme(args.perturb))
        comment += f' perturb={args.perturb} seed={config.seed}'
    path = save_matrix(A, args.out, comment=comment)
    logger.info(f'Wrote {A.shape[0]} x {A.shape[1]} matrix with {A.nnz} nonzeros to {path}')
    if args.gradient:
        B = build_gradient(Lattice.cube(args.d, args.dim))
        path = save_matrix(B, args.gradient, comment=f'gradient {args.dim}D d={args.d}')
        logger.info(f'Wrote {B.shape[0]} x {B.shape[1]} gradient to {path}')
    return 0


def cmd_analyze(args, config):
    A = load_matrix(args.matrix)
    diagnostics = diagnose(A, spark_max_k=args.spark_max_k, spark_budget=args.spark_budget,
                           trials=args.trials, seed=config.seed, workers=config.workers, verbose=config.verbose)
    print(diagnostics.model_dump_json(indent=2))
    return 0


def cmd_bounds(args, config):
    if not args.empirical:
        bound = report(args.dim, args.d, args.ell)
        needed = bound.m_known if args.known else bound.m_unknown
        logger.info(f'{"Known" if args.known else "Unknown"} cosupport: {needed} measurements for ell={args.ell}')
        print(bound.model_dump_json(indent=2))
        return 0

    lattice = Lattice.cube(args.d, args.dim)
    step = args.step or max(1, lattice.p // 40)
    rows = kappa_curve(lattice, range(0, lattice.p + 1, step), args.trials, config.seed,
                       workers=config.workers, verbose=config.verbose)
    table = [[ell, format_float(mean, 3), '' if bound is None else format_float(bound, 3)] for ell, mean, bound in rows]
    header = ['ell', 'mean_dim', 'bound']
    if args.out:
        with open(args.out, 'w') as f:
            f.write(rows_to_csv([header] + table).read())
        logger.info(f'Wrote {len(table)} rows to {args.out}')
    else:
        print(tabulate(table, headers=header))
    return 0


def cmd_phantom(args, config):
    if args.head:
        image = shepp_logan_like(Lattice.cube(args.d, args.dim))
        metadata = {'kind': 'head'}
    else:
        spec = PhantomSpec(dims=(args.d,) * args.dim, target_rho=args.rho, background=args.background,
                           seed=config.seed)
        image = generate(spec)
        metadata = {'kind': 'ellipses', 'seed': config.seed, 'spec': spec.model_dump(mode='json')}
    path = save_image(image, args.out, **metadata)
    print(tabulate([[path, image.lattice.n, image.gradient_sparsity(), image.cosparsity(),
                     format_float(image.gradient_sparsity() / image.lattice.n, 4)]],
                   headers=['file', 'n', 'k', 'ell', 'rho']))
    return 0


def cmd_recover(args, config):
    A = load_matrix(args.matrix)
    image, _ = load_image(args.image)
    mode = RecoveryMode.TV_KNOWN if args.known_cosupport else RecoveryMode(args.mode)
    problem = RecoveryProblem.from_image(A, image, mode)
    result = recover(problem, eps=args.eps, opts=SolverOptions(**config.solver_options()))
    document = result.to_dict()
    if args.certificate:
        document['certificate'] = certificate_for(A, image).to_dict()
    print_json(document)
    return 0 if result.solver.optimal else 1


def cmd_phase_transition(args, config):
    if args.config:
        plan = ExperimentPlan.load(args.config)
    else:
        plan = ExperimentPlan.preset(args.preset, master_seed=config.seed)
    logger.info(f'Configuration fingerprint {config.fingerprint()[:12]}')
    grid = run_plan(plan, workers=config.workers, opts=SolverOptions(**config.solver_options()),
                    verbose=config.verbose)
    try:
        fit_alpha(grid)
    except NoTransitionError as e:
        logger.warning(f'No alpha fitted: {e}')
    emit(grid, args.out)
    print(tabulate(sorted(grid.transitions.items()), headers=['d', 'transition rho']))
    print(f'alpha: {"n/a" if grid.alpha is None else format_float(grid.alpha, 4)}')
    if not grid.complete:
        logger.error(f'{len(grid.annotations)} trials did not complete')
        return 1
    return 0


def cmd_fit(args, config):
    grid = load_grid(args.csv, args.dim, args.dirs, args.known)
    alpha = fit_alpha(grid, theory=args.theory)
    print(tabulate(sorted(grid.transitions.items()), headers=['d', 'transition rho']))
    print(f'alpha: {format_float(alpha, 4)}')
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        description='Cosparse Tomography - unique TV recovery from few projections',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Three direction 2D projection matrix on a 64 x 64 grid
  python tomography.py build-matrix --dim 2 --d 64 --dirs 3 --out A.mtx

  # Same matrix with entries drawn from (0.9, 1.1)
  python tomography.py --seed 7 build-matrix --dim 2 --d 64 --dirs 3 --perturb interval:0.9,1.1 --out Ap.mtx

  # Rank, spark and sparsest nullspace vector
  python tomography.py analyze --matrix A.mtx --spark-max-k 6

  # Measurement bounds, or the empirical subspace dimension curve
  python tomography.py bounds --dim 2 --d 128 --ell 30261
  python tomography.py bounds --dim 2 --d 10 --empirical --trials 100 --out kappa.csv

  # Random ellipse phantom and its recovery
  python tomography.py --seed 3 phantom --dim 2 --d 64 --rho 0.1 --out u
  python tomography.py recover --matrix A.mtx --image u.raw --certificate

  # Phase transition sweep from a plan file or a preset
  python tomography.py phase-transition --config plan.json --out results/pt
  python tomography.py phase-transition --preset desk-2d-3dirs --out results/pt

  # Refit alpha from a written grid
  python tomography.py fit --csv results/pt.csv --dim 2 --dirs 3
        """
    )
    parser.add_argument('--workers', '-w', type=int, help='Worker processes, default COSPARSE_WORKERS or core count')
    parser.add_argument('--seed', type=int, help='Master seed, default COSPARSE_SEED')
    parser.add_argument('--env', help='Path of a .env file')
    parser.add_argument('--verbose', '-v', action='store_true', help='Verbose output')
    commands = parser.add_subparsers(dest='command', required=True)

    build = commands.add_parser('build-matrix', help='Write a projection matrix in Matrix Market format')
    build.add_argument('--dim', type=int, choices=(2, 3), required=True)
    build.add_argument('--d', type=int, required=True, help='Grid side length')
    build.add_argument('--dirs', type=int, required=True, help='Number of projection directions')
    build.add_argument('--perturb', help='interval:LO,HI or epsilon:EPS')
    build.add_argument('--out', required=True)
    build.add_argument('--gradient', help='Also write the forward difference operator of the grid')
    build.set_defaults(handler=cmd_build_matrix)

    analyze = commands.add_parser('analyze', help='Rank, spark and nullspace diagnostics as JSON')
    analyze.add_argument('--matrix', required=True)
    analyze.add_argument('--spark-max-k', type=int, help='Exact spark search up to this size')
    analyze.add_argument('--spark-budget', type=int, default=10 ** 9)
    analyze.add_argument('--trials', type=int, default=20, help='Sparsest nullspace vector restarts')
    analyze.set_defaults(handler=cmd_analyze)

    bounds = commands.add_parser('bounds', help='Cosparsity bounds and measurement thresholds')
    bounds.add_argument('--dim', type=int, choices=(2, 3), required=True)
    bounds.add_argument('--d', type=int, required=True)
    bounds.add_argument('--ell', type=int, help='Cosparsity')
    bounds.add_argument('--known', action='store_true', help='Report the known cosupport threshold')
    bounds.add_argument('--empirical', action='store_true', help='Monte-Carlo subspace dimension curve')
    bounds.add_argument('--trials', type=int, default=100)
    bounds.add_argument('--step', type=int, help='Cosparsity step of the empirical curve')
    bounds.add_argument('--out', help='CSV file for the empirical curve')
    bounds.set_defaults(handler=cmd_bounds)

    phantom = commands.add_parser('phantom', help='Random ellipse or head phantom')
    phantom.add_argument('--dim', type=int, choices=(2, 3), required=True)
    phantom.add_argument('--d', type=int, required=True)
    phantom.add_argument('--rho', type=float, help='Target relative gradient sparsity')
    phantom.add_argument('--background', type=float, default=0.0)
    phantom.add_argument('--head', action='store_true', help='Layered head phantom instead of ellipses')
    phantom.add_argument('--out', required=True, help='Output prefix, .raw and .json are written')
    phantom.set_defaults(handler=cmd_phantom)

    rec = commands.add_parser('recover', help='Recover an image from its projections')
    rec.add_argument('--matrix', required=True)
    rec.add_argument('--image', required=True, help='Ground truth image, measurements are A u')
    rec.add_argument('--mode', choices=[mode.value for mode in RecoveryMode], default=RecoveryMode.TV_UNKNOWN.value)
    rec.add_argument('--known-cosupport', action='store_true')
    rec.add_argument('--eps', type=float, help='Success threshold per pixel')
    rec.add_argument('--certificate', action='store_true', help='Also evaluate the uniqueness certificate')
    rec.set_defaults(handler=cmd_recover)

    sweep = commands.add_parser('phase-transition', help='Recovery success over (d, rho)')
    source = sweep.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', help='Experiment plan JSON')
    source.add_argument('--preset', help='Desk-scale preset name')
    sweep.add_argument('--out', required=True, help='Output prefix, .csv and .svg are written')
    sweep.set_defaults(handler=cmd_phase_transition)

    fit = commands.add_parser('fit', help='Refit alpha from a phase transition CSV')
    fit.add_argument('--csv', required=True)
    fit.add_argument('--dim', type=int, choices=(2, 3), required=True)
    fit.add_argument('--dirs', type=int, required=True)
    fit.add_argument('--known', action='store_true', help='Grid was recorded with known cosupport')
    fit.add_argument('--theory', choices=('known', 'unknown'), help='Curve to fit against, default matches the grid')
    fit.set_defaults(handler=cmd_fit)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    if args.command == 'bounds' and not args.empirical and args.ell is None:
        parser.error('bounds needs --ell unless --empirical is given')
    if args.command == 'phantom' and not args.head and args.rho is None:
        parser.error('phantom needs --rho unless --head is given')

    config = Configuration(
        workers=args.workers,
        seed=args.seed,
        verbose=args.verbose,
        env_file=args.env
    )

    try:
        return args.handler(args, config)
    except DOMAIN_ERRORS as e:
        logger.error(f'{args.command} failed: {e}')
        return 1


if __name__ == '__main__':
    exit(main())
