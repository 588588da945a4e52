import typing

import numpy as np

from gyver.ualk.exceptions import ArgumentError

ArrayLike = typing.Union[
    np.ndarray, typing.Sequence[float], typing.Sequence[typing.Sequence[float]]
]


def as_matrix(value: ArrayLike, *, name: str = 'matrix') -> np.ndarray:
    """Returns `value` as a finite, C-contiguous float64 matrix.

    A 1-D input is promoted to a single row."""
    try:
        arr = np.ascontiguousarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f'{name} is not a numeric matrix: {exc}') from exc
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ArgumentError(f'{name} must be 2-dimensional, got {arr.ndim} dimensions')
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f'{name} contains NaN or infinite entries')
    return arr


def as_vector(value: ArrayLike, *, name: str = 'vector') -> np.ndarray:
    try:
        arr = np.ascontiguousarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ArgumentError(f'{name} is not a numeric vector: {exc}') from exc
    if arr.ndim != 1:
        raise ArgumentError(f'{name} must be 1-dimensional, got {arr.ndim} dimensions')
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f'{name} contains NaN or infinite entries')
    return arr


def as_labels(value: typing.Sequence[int], n_classes: typing.Optional[int] = None) -> np.ndarray:
    arr = np.asarray(value)
    if arr.ndim != 1:
        raise ArgumentError('labels must be 1-dimensional')
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ArgumentError('labels must be integers')
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ArgumentError('labels must be non-negative')
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ArgumentError(f'labels must lie in [0, {n_classes})')
    return arr


def normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ArgumentError('cannot normalize a zero row')
    return m / norms


def is_unit(v: np.ndarray, tol: float = 1e-8) -> bool:
    return bool(np.all(np.abs(np.linalg.norm(np.atleast_2d(v), axis=1) - 1.0) <= tol))
