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

"""Local object storage for matrices, images and reports.

Objects live under a root directory and are addressed by relative filenames.
Three formats are handled:

  * Sparse matrices as Matrix Market exchange files ( .mtx ).
  * Dense arrays as little-endian float64 raw files with a JSON sidecar
    ( .raw + .json ) carrying shape and arbitrary metadata.
  * JSON documents.
"""

import os
import json
import errno
import logging

import numpy as np
import scipy.io
import scipy.sparse as sps

logger = logging.getLogger(__name__)

RAW_DTYPE = '<f8'


def makedirs_safe(path):
  try:
    os.makedirs(path)
  except OSError as exc:
    if exc.errno == errno.EEXIST and os.path.isdir(path):
      pass
    else:
      raise


def parse_path(path):
  try:
    return path.rsplit('/', 1)[0] if '/' in path else ''
  except AttributeError:
    return ''


def sidecar_name(filename):
  base = filename[:-4] if filename.endswith('.raw') else filename
  return base + '.json'


class Storage():

  def __init__(self, root='.'):
    self.root = root


  def _path(self, filename):
    return filename if os.path.isabs(filename) else os.path.join(self.root, filename)


  def _prepare(self, filename):
    path = self._path(filename)
    folder = parse_path(path)
    if folder:
      makedirs_safe(folder)
    return path


  def object_put(self, filename, data):
    path = self._prepare(filename)
    mode = 'wb' if isinstance(data, (bytes, bytearray)) else 'w'
    with open(path, mode) as f:
      f.write(data)
    logger.debug('Wrote %s', path)
    return path


  def object_get(self, filename, binary=False):
    with open(self._path(filename), 'rb' if binary else 'r') as f:
      return f.read()


  def json_put(self, filename, document):
    return self.object_put(filename, json.dumps(document, indent=2, sort_keys=True) + '\n')


  def json_get(self, filename):
    return json.loads(self.object_get(filename))


  def matrix_put(self, filename, matrix, comment=''):
    path = self._prepare(filename)
    scipy.io.mmwrite(path, sps.coo_matrix(matrix), comment=comment, field='real')
    logger.debug('Wrote matrix %s %s', path, matrix.shape)
    return path


  def matrix_get(self, filename):
    matrix = sps.csr_matrix(scipy.io.mmread(self._path(filename)))
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


  def array_put(self, filename, values, **metadata):
    """Writes values as raw little-endian float64 plus a JSON sidecar.

    Args:
      * filename: target, '.raw' is appended when missing.
      * values: array like, any shape.
      * metadata: JSON serializable fields stored in the sidecar.

    Returns:
      * Path of the raw file.
    """

    if not filename.endswith('.raw'):
      filename += '.raw'
    values = np.asarray(values, dtype=RAW_DTYPE)
    path = self._prepare(filename)
    with open(path, 'wb') as f:
      f.write(values.tobytes(order='C'))
    self.json_put(sidecar_name(filename), {'shape': list(values.shape), **metadata})
    return path


  def array_get(self, filename):
    """Returns (values, sidecar) with values reshaped as recorded."""

    if not filename.endswith('.raw'):
      filename += '.raw'
    sidecar = self.json_get(sidecar_name(filename))
    values = np.frombuffer(self.object_get(filename, binary=True), dtype=RAW_DTYPE)
    return values.reshape(sidecar['shape']).copy(), sidecar
