###########################################################################
#
#  Copyright 2020 Google LLC
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.
#
###########################################################################

"""The global run configuration of the cosparse tomography tools.

Configuration combines command line parameters with the environment so that
library calls, tests and the command line script see the same settings.  It
handles three important concepts:

  1. Parallelism, the number of worker processes used by brute force spark
     search, Monte-Carlo estimates and phase-transition sweeps.

  2. Reproducibility, a master seed from which every random stream is
     derived.  Identical configuration yields identical outputs.

  3. Solver tolerances passed to every linear program.

    Values can be specified in one of three ways, highest priority first:

    A. Constructor arguments (used by the command line script).
    B. Environment variables, optionally loaded from a .env file:
       COSPARSE_WORKERS = worker process count.
       COSPARSE_SEED = master seed.
    C. Defaults below.
"""

import os
import json
import hashlib

from dotenv import load_dotenv

from util.misc import worker_scale

DEFAULT_SEED = 20141015
DEFAULT_FEAS_TOL = 1e-9
DEFAULT_GAP_TOL = 1e-9
DEFAULT_MAX_ITERS = 200


class Configuration():

  def __init__(
    self,
    workers=None,
    seed=None,
    feas_tol=DEFAULT_FEAS_TOL,
    gap_tol=DEFAULT_GAP_TOL,
    max_iters=DEFAULT_MAX_ITERS,
    output=None,
    verbose=False,
    env_file=None
  ):
    """Used in scripts and tests as programmatic entry point.

    Args:
      * workers: (int) See module description.
      * seed: (int) See module description.
      * feas_tol: (float) Primal and dual feasibility tolerance.
      * gap_tol: (float) Relative duality gap tolerance.
      * max_iters: (int) Interior point iteration limit.
      * output: (string) Directory prefix for written files.
      * verbose: (boolean) Print all the steps as they happen.
      * env_file: (string) Optional path of a .env file.

    Returns:
      Nothing.
    """

    load_dotenv(env_file)

    if workers is None and os.environ.get('COSPARSE_WORKERS'):
      workers = int(os.environ['COSPARSE_WORKERS'])
    if seed is None and os.environ.get('COSPARSE_SEED'):
      seed = int(os.environ['COSPARSE_SEED'])

    self.workers = worker_scale(maximum=workers) if workers is None else max(1, int(workers))
    self.seed = DEFAULT_SEED if seed is None else int(seed)
    self.feas_tol = feas_tol
    self.gap_tol = gap_tol
    self.max_iters = max_iters
    self.output = output or '.'
    self.verbose = verbose

    if self.verbose:
      print('WORKERS:', self.workers)
      print('SEED:', self.seed)


  def solver_options(self):
    return {
      'feas_tol': self.feas_tol,
      'gap_tol': self.gap_tol,
      'max_iters': self.max_iters,
    }


  def fingerprint(self):
    """Provide value that can be used as a cache key.

    Worker count and verbosity are excluded, they never change results.
    """

    h = hashlib.sha256()
    h.update(json.dumps({'seed': self.seed, **self.solver_options()}, sort_keys=True).encode())
    return h.hexdigest()
