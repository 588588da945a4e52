import logging
import typing

import numpy as np
from gyver.attrs import define
from lazyfields import lazyfield

from gyver.ualk.exceptions import ArgumentError, DecompositionError, EstimationError
from gyver.ualk.numerics import (
    RngState,
    as_labels,
    as_matrix,
    cholesky_factor,
    knn_distances,
    knn_rank,
    log_gaussian_density,
    normalize_rows,
)
from gyver.ualk.shortcuts import numeric

logger = logging.getLogger(__name__)


@define
class SynthesisConfig:
    """Outlier synthesis knobs.

    Parametric path: a pool of `pool_size` Gaussian draws per class, of which
    the `t` lowest-likelihood ones form the ε-region and the lowest
    `n_outliers` are returned. Non-parametric path: `anchor_fraction` of the
    embeddings with the largest `knn_k`-NN distance serve as anchors, each
    spawning `candidates_per_anchor` draws from N(anchor, sigma2·I)."""

    t: int = 1
    pool_size: int = 10_000
    n_outliers: int = 1
    sigma2: float = 0.03
    knn_k: int = 50
    candidates_per_anchor: int = 10
    anchor_fraction: float = 0.05

    def __post_init__(self) -> None:
        if not 1 <= self.t <= self.pool_size:
            raise ArgumentError(f't must lie in [1, pool_size], got {self.t}')
        if self.n_outliers < 1:
            raise ArgumentError(f'n_outliers must be positive, got {self.n_outliers}')
        if self.sigma2 <= 0:
            raise ArgumentError(f'sigma2 must be positive, got {self.sigma2}')
        if self.knn_k < 1 or self.candidates_per_anchor < 1:
            raise ArgumentError('knn_k and candidates_per_anchor must be positive')
        if not 0 < self.anchor_fraction <= 1:
            raise ArgumentError(
                f'anchor_fraction must lie in (0, 1], got {self.anchor_fraction}'
            )


@numeric
class ClassGaussians:
    """Class-conditional Gaussians N(means[k], covariances[k]).

    A tied model stores a single (1, d, d) covariance shared by every class."""

    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        means = as_matrix(self.means, name='means')
        covariances = np.asarray(self.covariances, dtype=np.float64)
        dim = means.shape[1]
        if covariances.ndim != 3 or covariances.shape[1:] != (dim, dim):
            raise ArgumentError(f'covariances must be (c, {dim}, {dim}), got {covariances.shape}')
        if covariances.shape[0] not in (1, means.shape[0]):
            raise ArgumentError(
                f'{covariances.shape[0]} covariances given for {means.shape[0]} classes'
            )
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'covariances', covariances)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def tied(self) -> bool:
        return self.covariances.shape[0] == 1

    def covariance(self, k: int) -> np.ndarray:
        return self.covariances[0 if self.tied else k]

    @lazyfield
    def factors(self) -> list[np.ndarray]:
        return [cholesky_factor(cov) for cov in self.covariances]

    def factor(self, k: int) -> np.ndarray:
        return self.factors[0 if self.tied else k]

    def log_density(self, k: int, points: np.ndarray) -> np.ndarray:
        factor = self.factor(k)
        if np.any(np.diag(factor) <= 0):
            raise DecompositionError(f'covariance of class {k} is singular')
        return log_gaussian_density(points, self.means[k], factor)


def estimate_class_gaussians(
    features: np.ndarray,
    labels: typing.Sequence[int],
    *,
    tied: bool = True,
    n_classes: typing.Optional[int] = None,
) -> ClassGaussians:
    """Empirical class means and the pooled within-class covariance
    (1/N)·Σ_k Σ_{i∈k} (x_i − μ_k)(x_i − μ_k)ᵀ, or per-class covariances when
    `tied` is off."""
    features = as_matrix(features, name='features')
    labels = as_labels(labels, n_classes)
    if labels.size != features.shape[0]:
        raise ArgumentError(f'{labels.size} labels given for {features.shape[0]} rows')
    n_classes = n_classes if n_classes is not None else int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts < 2):
        short = np.flatnonzero(counts < 2).tolist()
        raise EstimationError(f'classes {short} have fewer than 2 samples')
    means = np.vstack([features[labels == k].mean(axis=0) for k in range(n_classes)])
    centered = features - means[labels]
    if tied:
        covariances = (centered.T @ centered / features.shape[0])[None]
    else:
        covariances = np.stack(
            [
                centered[labels == k].T @ centered[labels == k] / counts[k]
                for k in range(n_classes)
            ]
        )
    return ClassGaussians(means, covariances)


class ClassQueues:
    """Per-class FIFO queues of feature rows, each holding at most
    `capacity` rows."""

    __slots__ = ('capacity', 'dim', '_rows')

    def __init__(self, n_classes: int, dim: int, capacity: int) -> None:
        if capacity < 2:
            raise ArgumentError(f'queue capacity must be at least 2, got {capacity}')
        self.capacity = capacity
        self.dim = dim
        self._rows = [np.empty((0, dim)) for _ in range(n_classes)]

    @property
    def n_classes(self) -> int:
        return len(self._rows)

    def push(self, features: np.ndarray, labels: np.ndarray) -> None:
        for k in range(self.n_classes):
            fresh = features[labels == k]
            if fresh.shape[0]:
                self._rows[k] = np.vstack((self._rows[k], fresh))[-self.capacity :]

    def size(self, k: int) -> int:
        return self._rows[k].shape[0]

    def is_full(self) -> bool:
        return all(rows.shape[0] == self.capacity for rows in self._rows)

    def rows(self, k: int) -> np.ndarray:
        return self._rows[k]

    def estimate(self, *, tied: bool = True) -> ClassGaussians:
        features = np.vstack(self._rows)
        labels = np.repeat(np.arange(self.n_classes), [rows.shape[0] for rows in self._rows])
        return estimate_class_gaussians(
            features, labels, tied=tied, n_classes=self.n_classes
        )


def likelihood_threshold(log_densities: np.ndarray, t: int) -> float:
    """ε: the t-th smallest log-density of a pool."""
    return float(np.partition(log_densities, t - 1)[t - 1])


def sample_virtual_outliers(
    g: ClassGaussians, cfg: SynthesisConfig, k: int, rng: RngState
) -> np.ndarray:
    """Draws a pool from N(μ_k, Σ) and returns its `n_outliers`
    lowest-likelihood members, all inside the ε-region of the `t` lowest."""
    if not 0 <= k < g.n_classes:
        raise ArgumentError(f'class {k} outside [0, {g.n_classes})')
    if cfg.n_outliers > cfg.t:
        raise ArgumentError(
            f'n_outliers={cfg.n_outliers} exceeds the {cfg.t} candidates below ε'
        )
    factor = g.factor(k)
    pool = g.means[k] + rng.normal((cfg.pool_size, g.dim)) @ factor.T
    log_densities = g.log_density(k, pool)
    order = np.argsort(log_densities, kind='stable')
    return pool[order[: cfg.n_outliers]]


def boundary_anchors(embeddings: np.ndarray, cfg: SynthesisConfig) -> np.ndarray:
    """Indices of the anchors `sample_nonparametric_outliers` would use."""
    return _anchors(normalize_rows(as_matrix(embeddings, name='embeddings')), cfg)


def sample_nonparametric_outliers(
    embeddings: np.ndarray, cfg: SynthesisConfig, rng: RngState
) -> np.ndarray:
    """Boundary-anchored kernel sampling in a normalized embedding space.

    Rows with the largest self-excluded k-NN distance are anchors; each
    anchor keeps the candidate farthest (k-NN) from the embedding set."""
    bank = normalize_rows(as_matrix(embeddings, name='embeddings'))
    n = bank.shape[0]
    anchors = _anchors(bank, cfg)
    per_anchor = cfg.candidates_per_anchor
    candidates = np.repeat(bank[anchors], per_anchor, axis=0) + np.sqrt(
        cfg.sigma2
    ) * rng.normal((anchors.size * per_anchor, bank.shape[1]))
    spread = knn_distances(candidates, bank, cfg.knn_k).reshape(anchors.size, per_anchor)
    best = np.argmax(spread, axis=1)
    logger.debug('synthesized %d boundary outliers from %d embeddings', anchors.size, n)
    return candidates.reshape(anchors.size, per_anchor, -1)[np.arange(anchors.size), best]


def _anchors(bank: np.ndarray, cfg: SynthesisConfig) -> np.ndarray:
    if cfg.knn_k >= bank.shape[0]:
        raise ArgumentError(
            f'knn_k={cfg.knn_k} must be smaller than the {bank.shape[0]} embeddings'
        )
    distances = knn_distances(bank, bank, cfg.knn_k, exclude_self=True)
    return knn_rank(distances, max(1, int(round(cfg.anchor_fraction * bank.shape[0]))))
