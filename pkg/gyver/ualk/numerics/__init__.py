from .arrays import as_labels, as_matrix, as_vector, is_unit, normalize_rows
from .linalg import (
    cholesky_factor,
    cholesky_sample,
    knn_distance,
    knn_distances,
    knn_rank,
    log_gaussian_density,
    log_sum_exp,
    top_singular_vectors,
)
from .rng import RngState
from .special import bessel_i, bessel_ratio, log_bessel_i

__all__ = [
    'as_labels',
    'as_matrix',
    'as_vector',
    'is_unit',
    'normalize_rows',
    'cholesky_factor',
    'cholesky_sample',
    'knn_distance',
    'knn_distances',
    'knn_rank',
    'log_gaussian_density',
    'log_sum_exp',
    'top_singular_vectors',
    'RngState',
    'bessel_i',
    'bessel_ratio',
    'log_bessel_i',
]
