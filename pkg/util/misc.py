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

import struct
import hashlib
import multiprocessing

import psutil

"""Generic utilities that do not belong in any specific sub module.

Add general utility functions that are used across many modules.  Do
not add classes here.
"""


def worker_scale(maximum=None, memory_per_worker=None):
  """Returns number of worker processes available up to maximum.

  Uses physical cores when psutil can see them, otherwise logical cpus.
  When memory_per_worker is given, also caps by available memory.

  Args:
    * maximum: highest worker count wanted, None for no cap.
    * memory_per_worker: bytes each worker is expected to hold.

  Returns:
    * Number of workers, at least 1.

  """

  workers = psutil.cpu_count(logical=False) or multiprocessing.cpu_count()

  if memory_per_worker:
    workers = min(workers, int(psutil.virtual_memory().available // memory_per_worker))

  if maximum:
    workers = min(workers, maximum)

  return max(1, workers)


def stable_seed(*parts):
  """Derives a 64 bit seed from any mix of ints, floats and strings.

  Unlike hash(), the value does not change between interpreter runs, so
  seeds derived for parallel trials are identical regardless of scheduling.

  Args:
    * parts: values identifying the trial, order matters.

  Returns:
    * Non negative integer below 2**63.

  """

  h = hashlib.sha256()
  for part in parts:
    if isinstance(part, float):
      h.update(struct.pack('<d', part))
    else:
      h.update(str(part).encode())
    h.update(b'\x00')
  return int.from_bytes(h.digest()[:8], 'little') >> 1
