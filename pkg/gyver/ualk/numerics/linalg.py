import logging

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from gyver.ualk.exceptions import ArgumentError, ConvergenceError, DecompositionError
from gyver.ualk.numerics.arrays import as_matrix, as_vector
from gyver.ualk.numerics.rng import RngState

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-10
JITTER_ATTEMPTS = 3
_KNN_BUDGET = 1 << 22
_START_SEED = 0x5EED


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nonzero = np.flatnonzero(np.abs(v) > 1e-14)
    if nonzero.size and v[nonzero[0]] < 0:
        return -v
    return v


def _orthogonalize(x: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    # twice is enough (Kahan)
    for _ in range(2):
        for b in basis:
            x = x - (b @ x) * b
    return x


def top_singular_vectors(
    m: np.ndarray,
    k: int,
    max_iters: int = 10_000,
    tol: float = 1e-10,
) -> tuple[np.ndarray, list[float]]:
    """Top-`k` right singular vectors of `m` by power iteration on mᵀm.

    Each vector is found with a Rayleigh-quotient residual test
    ‖Bx − λx‖ ≤ tol·max(λ₁, tiny) and then deflated by projecting it out of the
    iterate. Vectors are returned as rows (k×cols), unit norm, with their first
    nonzero coordinate positive; values are descending.

    :param m: the matrix to decompose.
    :param k: number of singular pairs, at most min(rows, cols).
    :param max_iters: iteration budget per vector.
    :param tol: relative residual tolerance, must be positive.
    :raises ConvergenceError: when a vector does not settle within `max_iters`.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    if k < 1 or k > min(rows, cols):
        raise ArgumentError(f'k must lie in [1, {min(rows, cols)}], got {k}')
    if tol <= 0:
        raise ArgumentError(f'tol must be positive, got {tol}')
    gram = m.T @ m
    scale = max(float(np.max(np.abs(gram))) if gram.size else 0.0, np.finfo(float).tiny)
    start = RngState(_START_SEED)
    vectors: list[np.ndarray] = []
    values: list[float] = []
    for index in range(k):
        x = _orthogonalize(start.normal(cols), vectors)
        norm = np.linalg.norm(x)
        x = x / norm
        residual = np.inf
        for _ in range(max_iters):
            y = _orthogonalize(gram @ x, vectors)
            rayleigh = float(x @ y)
            residual = float(np.linalg.norm(y - rayleigh * x))
            if residual <= tol * scale:
                break
            ynorm = np.linalg.norm(y)
            if ynorm <= np.finfo(float).tiny:
                # x lies in the null space of the deflated gram matrix
                residual = 0.0
                break
            x = y / ynorm
        else:
            raise ConvergenceError(
                f'power iteration did not converge for singular vector {index}'
                f' after {max_iters} iterations',
                residual,
            )
        x = _orthogonalize(x, vectors)
        x = _fix_sign(x / np.linalg.norm(x))
        vectors.append(x)
        values.append(float(np.linalg.norm(m @ x)))
    logger.debug('top singular values %s', values)
    return np.vstack(vectors), values


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a PSD matrix, with trace-scaled jitter.

    An all-zero matrix factors to zero."""
    cov = as_matrix(cov, name='cov')
    dim = cov.shape[0]
    if cov.shape != (dim, dim):
        raise ArgumentError(f'covariance must be square, got {cov.shape}')
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise DecompositionError('covariance is not symmetric')
    if not np.any(cov):
        return np.zeros_like(cov)
    cov = (cov + cov.T) / 2
    jitter = JITTER_SCALE * abs(float(np.trace(cov))) / dim
    current = cov
    for attempt in range(JITTER_ATTEMPTS + 1):
        try:
            return np.linalg.cholesky(current)
        except np.linalg.LinAlgError:
            if attempt == JITTER_ATTEMPTS:
                break
            logger.warning(
                'covariance not positive definite, adding jitter %.3e (attempt %d)',
                jitter * (attempt + 1),
                attempt + 1,
            )
            current = cov + jitter * (attempt + 1) * np.eye(dim)
    raise DecompositionError(
        f'covariance is not positive semi-definite within {JITTER_ATTEMPTS} jitter steps'
    )


def cholesky_sample(
    mean: np.ndarray, cov: np.ndarray, n: int, rng: RngState
) -> np.ndarray:
    """Draws `n` rows from N(mean, cov) as mean + z·Lᵀ."""
    mean = as_vector(mean, name='mean')
    factor = cholesky_factor(cov)
    if factor.shape[0] != mean.size:
        raise ArgumentError(
            f'mean has {mean.size} entries but covariance is {factor.shape[0]}-dimensional'
        )
    if n < 0:
        raise ArgumentError(f'n must be non-negative, got {n}')
    z = rng.normal((n, mean.size))
    return mean + z @ factor.T


def log_gaussian_density(
    points: np.ndarray, mean: np.ndarray, factor: np.ndarray
) -> np.ndarray:
    """log N(points; mean, LLᵀ) row-wise, given the Cholesky factor L."""
    dim = mean.size
    diff = np.atleast_2d(points) - mean
    solved = solve_triangular(factor, diff.T, lower=True, check_finite=False)
    mahalanobis = np.sum(solved**2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    return -0.5 * (dim * np.log(2 * np.pi) + log_det + mahalanobis)


def log_sum_exp(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ArgumentError('log_sum_exp of an empty vector')
    return float(logsumexp(v))


def _bitwise_equal_rows(query: np.ndarray, bank: np.ndarray) -> np.ndarray:
    q = np.ascontiguousarray(query, dtype=np.float64).view(np.uint64)
    b = np.ascontiguousarray(bank, dtype=np.float64).view(np.uint64)
    return np.all(b == q, axis=1)


def _check_k(k: int, effective: int) -> None:
    if not 1 <= k <= effective:
        raise ArgumentError(f'k must lie in [1, {effective}], got {k}')


def knn_distance(
    query: np.ndarray, bank: np.ndarray, k: int, exclude_self: bool = False
) -> float:
    """Euclidean distance from `query` to its k-th nearest row of `bank`.

    With `exclude_self`, one row bitwise equal to `query` (if any) is skipped."""
    query = as_vector(query, name='query')
    bank = as_matrix(bank, name='set')
    if bank.shape[1] != query.size:
        raise ArgumentError(
            f'query has {query.size} entries but set rows have {bank.shape[1]}'
        )
    distances = np.sqrt(np.sum((bank - query) ** 2, axis=1))
    if exclude_self:
        matches = np.flatnonzero(_bitwise_equal_rows(query, bank))
        if matches.size:
            distances = np.delete(distances, matches[0])
    _check_k(k, distances.size)
    return float(np.partition(distances, k - 1)[k - 1])


def knn_distances(
    queries: np.ndarray,
    bank: np.ndarray,
    k: int,
    exclude_self: bool = False,
) -> np.ndarray:
    """Row-wise `knn_distance`, computed in chunks of queries."""
    queries = as_matrix(queries, name='queries')
    bank = as_matrix(bank, name='set')
    if bank.shape[1] != queries.shape[1]:
        raise ArgumentError(
            f'queries have {queries.shape[1]} columns but set rows have {bank.shape[1]}'
        )
    n_bank = bank.shape[0]
    _check_k(k, n_bank - 1 if exclude_self else n_bank)
    result = np.empty(queries.shape[0])
    step = max(1, _KNN_BUDGET // max(1, n_bank * bank.shape[1]))
    for start in range(0, queries.shape[0], step):
        chunk = queries[start : start + step]
        diff = bank[None, :, :] - chunk[:, None, :]
        distances = np.sqrt(np.sum(diff**2, axis=2))
        if exclude_self:
            equal = np.all(
                bank.view(np.uint64)[None, :, :] == chunk.view(np.uint64)[:, None, :],
                axis=2,
            )
            has_self = equal.any(axis=1)
            first = np.argmax(equal, axis=1)
            rows = np.flatnonzero(has_self)
            distances[rows, first[rows]] = np.inf
            # queries without a self match keep n_bank candidates
            ordered = np.sort(distances, axis=1)
            result[start : start + chunk.shape[0]] = ordered[:, k - 1]
        else:
            result[start : start + chunk.shape[0]] = np.partition(
                distances, k - 1, axis=1
            )[:, k - 1]
    return result


def knn_rank(values: np.ndarray, top: int) -> np.ndarray:
    """Indices of the `top` largest values, largest first, ties by index."""
    order = np.lexsort((np.arange(values.size), -values))
    return order[:top]
