"""On-disk model bundles: a JSON manifest plus one Matrix Market file per matrix.

Layout of a bundle directory::

    manifest.json   {"format_version": "1.0", "name": ..., "n": ..., "m": ...,
                     "files": {"E": "E.mtx", ...}, "meta": {...}}
    E.mtx J.mtx R.mtx G.mtx P.mtx S.mtx N.mtx

Values are written with 17 significant digits, so finite doubles round-trip
exactly.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import scipy.io as sio

from .core import PHDae, PHDaeError
from .param import Theta

__all__ = ['FORMAT_VERSION', 'BundleError', 'MissingFileError', 'DimensionMismatchError',
           'VersionMismatchError', 'save_model', 'load_model', 'read_manifest',
           'write_matrix', 'read_matrix', 'save_theta', 'load_theta']

FORMAT_VERSION = '1.0'
MATRICES = ('E', 'J', 'R', 'G', 'P', 'S', 'N')
MANIFEST = 'manifest.json'


class BundleError(PHDaeError):
    pass


class MissingFileError(BundleError, FileNotFoundError):
    pass


class DimensionMismatchError(BundleError, ValueError):
    pass


class VersionMismatchError(BundleError, ValueError):
    """Unsupported, missing or unreadable format version (corrupt manifest)."""


def _shape_header(path):
    with open(path) as fh:
        for line in fh:
            if not line.startswith('%') and line.strip():
                return tuple(int(x) for x in line.split()[:2])
    raise DimensionMismatchError(f'{path}: no size line')


def write_matrix(path, A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatchError('only 2-d arrays can be written')
    if A.size == 0:
        # scipy's writer does not handle empty arrays
        with open(path, 'w') as fh:
            fh.write('%%MatrixMarket matrix array real general\n%\n')
            fh.write(f'{A.shape[0]} {A.shape[1]}\n')
        return
    sio.mmwrite(str(path), A, precision=17)


def read_matrix(path):
    if not os.path.exists(path):
        raise MissingFileError(f'missing matrix file {path}')
    shape = _shape_header(path)
    if 0 in shape:
        return np.zeros(shape)
    A = sio.mmread(str(path))
    A = A.toarray() if hasattr(A, 'toarray') else np.asarray(A)
    return np.asarray(A, dtype=float)


def save_model(sys, path, name=None, meta=None):
    """Write ``sys`` as a bundle directory at ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    mats = sys.matrices()
    for key in MATRICES:
        A = mats[key]
        fname = f'{key}.mtx'
        write_matrix(path / fname, A)
        files[key] = fname
    manifest = {'format_version': FORMAT_VERSION, 'name': name or path.name,
                'n': sys.n, 'm': sys.m, 'files': files, 'meta': meta or {}}
    with open(path / MANIFEST, 'w') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write('\n')
    return path


def read_manifest(path):
    mpath = Path(path) / MANIFEST
    if not mpath.exists():
        raise MissingFileError(f'missing {mpath}')
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VersionMismatchError(f'corrupt manifest {mpath}: {exc}') from exc
    if not isinstance(manifest, dict):
        raise VersionMismatchError(f'corrupt manifest {mpath}')
    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f'format version {version!r}, expected {FORMAT_VERSION!r}')
    return manifest


def load_model(path):
    """Read a bundle written by :func:`save_model`."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        n, m, files = int(manifest['n']), int(manifest['m']), manifest['files']
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionMismatchError(f'manifest lacks n, m or files: {exc}') from exc
    expected = {'E': (n, n), 'J': (n, n), 'R': (n, n), 'G': (n, m), 'P': (n, m),
                'S': (m, m), 'N': (m, m)}
    mats = {}
    for key in MATRICES:
        if key not in files:
            raise MissingFileError(f'manifest names no file for {key}')
        A = read_matrix(path / files[key])
        if A.shape != expected[key]:
            raise DimensionMismatchError(f'{key} has shape {A.shape}, manifest says '
                                         f'{expected[key]}')
        mats[key] = A
    return PHDae(**mats)


def save_theta(theta, path):
    with open(path, 'w') as fh:
        fh.write(theta.to_json())
        fh.write('\n')


def load_theta(path):
    if not os.path.exists(path):
        raise MissingFileError(f'missing checkpoint {path}')
    with open(path) as fh:
        return Theta.from_json(fh.read())
