"""Membership estimation over an unlabeled embedding mixture.

Centered embeddings are projected on their top-k singular subspace; the
singular-value-weighted squared projection ζ ranks samples by how likely they
are to be hallucinated, and the split it induces trains a truthfulness head."""

import logging
import typing

import numpy as np
from gyver.attrs import define, info

from gyver.ualk.exceptions import ArgumentError, EmptyCandidateError
from gyver.ualk.metrics import ScoreSets, auroc, nearest_rank
from gyver.ualk.model.binary import BINARY_WIDTH, BinaryHead, train_binary
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.numerics import as_matrix, as_vector, normalize_rows, top_singular_vectors
from gyver.ualk.shortcuts import numeric
from gyver.ualk.utils.parallel import map_rows

logger = logging.getLogger(__name__)

SPLIT_QUANTILE = 0.85
HEAD_WEIGHT_DECAY = 1e-2
ORTHONORMAL_TOL = 1e-8


@numeric
class SubspaceModel:
    center: np.ndarray
    singular_vectors: np.ndarray
    singular_values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        center = as_vector(self.center, name='center')
        vectors = as_matrix(self.singular_vectors, name='singular_vectors')
        values = as_vector(self.singular_values, name='singular_values')
        if vectors.shape[1] != center.size:
            raise ArgumentError(
                f'singular vectors have {vectors.shape[1]} columns for {center.size} dimensions'
            )
        if not 1 <= values.size == vectors.shape[0]:
            raise ArgumentError('one singular value per vector and at least one vector')
        rising = np.diff(values) > ORTHONORMAL_TOL * max(values[0], 1.0)
        if np.any(values < 0) or np.any(rising):
            raise ArgumentError('singular values must be non-negative and descending')
        gram = vectors @ vectors.T
        if np.max(np.abs(gram - np.eye(values.size))) > ORTHONORMAL_TOL:
            raise ArgumentError('singular vectors must be orthonormal rows')
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'singular_vectors', vectors)
        object.__setattr__(self, 'singular_values', values)

    @property
    def k(self) -> int:
        return self.singular_values.size

    @property
    def dim(self) -> int:
        return self.center.size


@define
class HaloConfig:
    """`k` singular directions, the `split_quantile` of ζ separating the
    hallucinated side and the truthfulness head's training settings."""

    k: int = 1
    weighted: bool = True
    normalize: bool = False
    split_quantile: float = SPLIT_QUANTILE
    width: int = BINARY_WIDTH
    train: TrainConfig = info(
        default_factory=lambda: TrainConfig(
            lr=0.05,
            epochs=50,
            batch_size=512,
            weight_decay=HEAD_WEIGHT_DECAY,
            schedule='cosine',
            beta=1.0,
        )
    )

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ArgumentError(f'k must be positive, got {self.k}')
        if not 0 < self.split_quantile < 1:
            raise ArgumentError(
                f'split_quantile must lie in (0, 1), got {self.split_quantile}'
            )
        if self.width < 1:
            raise ArgumentError(f'width must be positive, got {self.width}')


def _prepare(f: np.ndarray, normalize: bool) -> np.ndarray:
    f = as_matrix(f, name='embeddings')
    return normalize_rows(f) if normalize else f


def fit_subspace(f: np.ndarray, k: int, normalize: bool = False) -> SubspaceModel:
    """Centers the embeddings on their mean and keeps the top-`k` right
    singular pairs of the centered matrix."""
    f = _prepare(f, normalize)
    n, d = f.shape
    if not 1 <= k < n or k > d:
        raise ArgumentError(f'k must lie in [1, min({n - 1}, {d})], got {k}')
    center = f.mean(axis=0)
    vectors, values = top_singular_vectors(f - center, k)
    logger.debug('subspace k=%d singular values %s', k, values)
    return SubspaceModel(center, vectors, np.array(values), normalize)


def membership_scores(
    model: SubspaceModel, f: np.ndarray, weighted: bool = True
) -> np.ndarray:
    """ζ_i = (1/k)·Σ_j σ_j·⟨f_i − μ, v_j⟩²; σ_j is taken as 1 when
    `weighted` is off."""
    f = _prepare(f, model.normalized)
    if f.shape[1] != model.dim:
        raise ArgumentError(f'embeddings have {f.shape[1]} columns, model expects {model.dim}')
    weights = model.singular_values if weighted else np.ones(model.k)

    def rows(chunk: np.ndarray) -> np.ndarray:
        projections = (chunk - model.center) @ model.singular_vectors.T
        return projections**2 @ weights / model.k

    return map_rows(rows, f)


def split(
    f: np.ndarray,
    scores: typing.Sequence[float],
    threshold: typing.Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(hallucinated, truthful) index sets: ζ > T and ζ ≤ T.

    Without a threshold T is the nearest-rank 85th percentile of ζ."""
    scores = as_vector(scores, name='scores')
    rows = np.asarray(f).shape[0]
    if scores.size != rows:
        raise ArgumentError(f'{scores.size} scores given for {rows} embeddings')
    if threshold is None:
        threshold = nearest_rank(scores, SPLIT_QUANTILE)
    above = scores > threshold
    return np.flatnonzero(above), np.flatnonzero(~above)


class TruthfulnessDetector:
    """S(x) = σ(g_θ(x)), the probability that an embedding is truthful."""

    __slots__ = ('head',)

    def __init__(self, head: BinaryHead) -> None:
        self.head = head

    def score(self, f: np.ndarray) -> np.ndarray:
        return self.head.probability(f)

    def detect(self, f: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        """G_λ(x) = 1{S(x) ≥ λ}; True marks truthful samples."""
        return self.score(f) >= threshold


def train_truthfulness(
    f: np.ndarray,
    candidates: tuple[np.ndarray, np.ndarray],
    cfg: typing.Optional[HaloConfig] = None,
) -> TruthfulnessDetector:
    """Truthful side as positives, hallucinated side as negatives."""
    cfg = cfg if cfg is not None else HaloConfig()
    f = as_matrix(f, name='embeddings')
    hallucinated, truthful = (np.asarray(side, dtype=np.int64) for side in candidates)
    if not hallucinated.size or not truthful.size:
        raise EmptyCandidateError(
            f'split is one-sided: {hallucinated.size} hallucinated,'
            f' {truthful.size} truthful samples'
        )
    head = train_binary(f[truthful], f[hallucinated], cfg.train, width=cfg.width)
    return TruthfulnessDetector(head)


def tune_k(
    train: np.ndarray,
    validation: np.ndarray,
    hallucinated: typing.Sequence[bool],
    candidates: typing.Sequence[int] = (1, 2, 3, 4, 5),
    *,
    weighted: bool = True,
    normalize: bool = False,
) -> int:
    """The k whose membership scores best separate the labeled validation
    embeddings (AUROC); ties go to the smaller k."""
    flags = np.asarray(hallucinated, dtype=bool)
    n, d = as_matrix(train, name='train').shape
    usable = sorted(k for k in set(candidates) if 1 <= k < n and k <= d)
    if not usable:
        raise ArgumentError(f'no candidate k fits {n} samples of dimension {d}')
    best_k, best = usable[0], -1.0
    for k in usable:
        model = fit_subspace(train, k, normalize)
        zeta = membership_scores(model, validation, weighted)
        if zeta.size != flags.size:
            raise ArgumentError(f'{flags.size} flags given for {zeta.size} validation rows')
        value = auroc(ScoreSets(-zeta[~flags], -zeta[flags]))
        logger.debug('tune_k k=%d auroc=%.6f', k, value)
        if value > best:
            best_k, best = k, value
    logger.info('tune_k chose k=%d auroc=%.6f', best_k, best)
    return best_k


def train_halo(
    f: np.ndarray, cfg: typing.Optional[HaloConfig] = None
) -> tuple[SubspaceModel, np.ndarray, TruthfulnessDetector]:
    """Subspace fit, membership scores, thresholded split and the
    truthfulness head trained on it."""
    cfg = cfg if cfg is not None else HaloConfig()
    model = fit_subspace(f, cfg.k, cfg.normalize)
    zeta = membership_scores(model, f, cfg.weighted)
    sides = split(f, zeta, nearest_rank(zeta, cfg.split_quantile))
    logger.info(
        'halo split hallucinated=%d truthful=%d', sides[0].size, sides[1].size
    )
    return model, zeta, train_truthfulness(f, sides, cfg)
