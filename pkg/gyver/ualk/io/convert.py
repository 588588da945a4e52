import logging
import os

import numpy as np

from gyver.ualk.exceptions import FormatError
from gyver.ualk.io.container import is_matrix_file, read_matrix, write_matrix
from gyver.ualk.io.tabular import read_csv, write_csv
from gyver.ualk.utils.typedef import PathLike

logger = logging.getLogger(__name__)

CSV_SUFFIXES = ('.csv',)
BINARY_SUFFIXES = ('.ualk', '.bin')


def _kind(path: PathLike) -> str:
    suffix = os.path.splitext(os.fspath(path))[1].lower()
    if suffix in CSV_SUFFIXES:
        return 'csv'
    if suffix in BINARY_SUFFIXES:
        return 'binary'
    raise FormatError(f'unrecognized matrix format {suffix!r}', os.fspath(path))


def load_matrix(path: PathLike) -> np.ndarray:
    """Reads a matrix from CSV or the binary container, by magic first and
    then by suffix."""
    if os.path.exists(path) and is_matrix_file(path):
        return read_matrix(path)
    if _kind(path) == 'binary':
        return read_matrix(path)
    return read_csv(path)[0]


def save_matrix(path: PathLike, m: np.ndarray) -> None:
    if _kind(path) == 'csv':
        write_csv(path, m)
    else:
        write_matrix(path, m)


def convert(source: PathLike, target: PathLike) -> None:
    """Lossless CSV <-> binary matrix conversion."""
    source_kind, target_kind = _kind(source), _kind(target)
    if source_kind == 'binary':
        matrix, header = read_matrix(source), None
    else:
        matrix, header = read_csv(source)
    if target_kind == 'csv':
        write_csv(target, matrix, header)
    else:
        if header is not None:
            logger.info('dropping CSV header %s, binary matrices carry none', header)
        write_matrix(target, matrix)
    logger.info('converted %s (%s) to %s (%s)', source, source_kind, target, target_kind)
