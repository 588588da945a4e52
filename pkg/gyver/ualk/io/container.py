"""Binary matrix container.

A matrix record is the magic ``b'UALK'``, a u32 version, u64 rows, u64 cols
and rows·cols little-endian float64 values in row-major order. A sectioned
file is a sequence of ``u32 name length | UTF-8 name | matrix record``
entries; since names are capped at 65535 bytes its first four bytes can never
spell the magic."""

import os
import struct
from collections.abc import Mapping

import numpy as np

from gyver.ualk.exceptions import FormatError
from gyver.ualk.numerics import as_matrix
from gyver.ualk.utils.typedef import PathLike

MAGIC = b'UALK'
VERSION = 1
MAX_NAME_BYTES = 0xFFFF

_HEADER = struct.Struct('<4sIQQ')
_NAME_LEN = struct.Struct('<I')
_DATA_DTYPE = np.dtype('<f8')


def encode_matrix(m: np.ndarray) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + m.astype(_DATA_DTYPE).tobytes()


def _decode_matrix(buffer: bytes, offset: int, location: str) -> tuple[np.ndarray, int]:
    if len(buffer) - offset < _HEADER.size:
        raise FormatError(f'truncated matrix header at byte {offset}', location)
    magic, version, rows, cols = _HEADER.unpack_from(buffer, offset)
    if magic != MAGIC:
        raise FormatError(f'bad magic {magic!r} at byte {offset}', location)
    if version != VERSION:
        raise FormatError(f'unsupported container version {version}', location)
    offset += _HEADER.size
    size = rows * cols * _DATA_DTYPE.itemsize
    if len(buffer) - offset < size:
        raise FormatError(
            f'matrix of {rows}x{cols} needs {size} bytes, {len(buffer) - offset} left',
            location,
        )
    data = np.frombuffer(buffer, dtype=_DATA_DTYPE, count=rows * cols, offset=offset)
    return data.astype(np.float64).reshape(rows, cols), offset + size


def decode_matrix(buffer: bytes, location: str = '<bytes>') -> np.ndarray:
    matrix, end = _decode_matrix(buffer, 0, location)
    if end != len(buffer):
        raise FormatError(f'{len(buffer) - end} trailing bytes after matrix', location)
    return matrix


def encode_sections(sections: Mapping[str, np.ndarray]) -> bytes:
    chunks = []
    for name, matrix in sections.items():
        raw = name.encode('utf-8')
        if not raw or len(raw) > MAX_NAME_BYTES:
            raise FormatError(f'section name must be 1 to {MAX_NAME_BYTES} bytes: {name!r}')
        chunks.append(_NAME_LEN.pack(len(raw)) + raw + encode_matrix(matrix))
    return b''.join(chunks)


def decode_sections(buffer: bytes, location: str = '<bytes>') -> dict[str, np.ndarray]:
    if buffer[:4] == MAGIC:
        raise FormatError('plain matrix file where sections were expected', location)
    sections: dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(buffer):
        if len(buffer) - offset < _NAME_LEN.size:
            raise FormatError(f'truncated section name at byte {offset}', location)
        (length,) = _NAME_LEN.unpack_from(buffer, offset)
        offset += _NAME_LEN.size
        if not 0 < length <= MAX_NAME_BYTES or len(buffer) - offset < length:
            raise FormatError(f'bad section name length {length}', location)
        try:
            name = buffer[offset : offset + length].decode('utf-8')
        except UnicodeDecodeError as exc:
            raise FormatError(f'section name is not UTF-8: {exc}', location) from exc
        if name in sections:
            raise FormatError(f'duplicate section {name!r}', location)
        sections[name], offset = _decode_matrix(buffer, offset + length, location)
    return sections


def write_matrix(path: PathLike, m: np.ndarray) -> None:
    with open(path, 'wb') as stream:
        stream.write(encode_matrix(m))


def read_matrix(path: PathLike) -> np.ndarray:
    with open(path, 'rb') as stream:
        return decode_matrix(stream.read(), os.fspath(path))


def write_sections(path: PathLike, sections: Mapping[str, np.ndarray]) -> None:
    with open(path, 'wb') as stream:
        stream.write(encode_sections(sections))


def read_sections(path: PathLike) -> dict[str, np.ndarray]:
    with open(path, 'rb') as stream:
        return decode_sections(stream.read(), os.fspath(path))


def is_matrix_file(path: PathLike) -> bool:
    with open(path, 'rb') as stream:
        return stream.read(len(MAGIC)) == MAGIC
