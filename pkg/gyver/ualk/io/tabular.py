"""Comma-separated matrices: '.' decimal, UTF-8, LF newlines, at most one
header row. Values are written with the shortest repr that round-trips."""

import csv
import math
import os
import typing

import numpy as np

from gyver.ualk.exceptions import FormatError
from gyver.ualk.numerics import as_matrix
from gyver.ualk.utils.typedef import PathLike


def _parse_float(field: str) -> typing.Optional[float]:
    try:
        return float(field)
    except ValueError:
        return None


def write_csv(
    path: PathLike, m: np.ndarray, header: typing.Optional[typing.Sequence[str]] = None
) -> None:
    m = as_matrix(m)
    if header is not None and len(header) != m.shape[1]:
        raise FormatError(f'{len(header)} header names for {m.shape[1]} columns')
    with open(path, 'w', encoding='utf-8', newline='') as stream:
        if header is not None:
            stream.write(','.join(header) + '\n')
        for row in m.tolist():
            stream.write(','.join(map(repr, row)) + '\n')


def read_csv(path: PathLike) -> tuple[np.ndarray, typing.Optional[list[str]]]:
    """Returns the matrix and the header names, if the file has a header.

    A first row with any non-numeric field is taken as the header."""
    location = os.fspath(path)
    with open(path, encoding='utf-8', newline='') as stream:
        reader = csv.reader(stream)
        rows = [(reader.line_num, row) for row in reader if row]
    header: typing.Optional[list[str]] = None
    if rows and any(_parse_float(field) is None for field in rows[0][1]):
        header, rows = [field.strip() for field in rows[0][1]], rows[1:]
    width = len(header) if header is not None else (len(rows[0][1]) if rows else 0)
    values = np.empty((len(rows), width))
    for index, (line, row) in enumerate(rows):
        if len(row) != width:
            raise FormatError(
                f'row {line} has {len(row)} fields, expected {width}',
                f'{location}:{line}',
            )
        for col, field in enumerate(row):
            value = _parse_float(field)
            if value is None or not math.isfinite(value):
                raise FormatError(
                    f'row {line} column {col + 1}: {field!r} is not a finite number',
                    f'{location}:{line}',
                )
            values[index, col] = value
    return values, header
