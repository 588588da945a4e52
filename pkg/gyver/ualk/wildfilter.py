"""Gradient-based filtering of candidate outliers out of unlabeled wild data.

A classifier trained on labeled ID data gives a reference gradient; wild
samples whose (reference-subtracted) final-layer gradients project strongly
on the top singular direction of the wild gradient matrix become candidate
outliers, and a binary head is then trained to separate them from ID data."""

import logging
import typing

import numpy as np
from gyver.attrs import define, info
from lazyfields import lazyfield

from gyver.ualk.datagen import LabeledSet, WildSet
from gyver.ualk.exceptions import ArgumentError, EmptyCandidateError, FormatError, StateError
from gyver.ualk.io.container import read_sections, write_sections
from gyver.ualk.metrics import nearest_rank, reveal_membership
from gyver.ualk.model.binary import BINARY_WIDTH, BinaryHead, train_binary
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.model.mlp import MlpClassifier, per_sample_gradients, predict_batch
from gyver.ualk.model.training import train_erm
from gyver.ualk.numerics import as_matrix, as_vector, is_unit, top_singular_vectors
from gyver.ualk.shortcuts import numeric
from gyver.ualk.utils.typedef import PathLike

logger = logging.getLogger(__name__)

GLOBAL_BUCKET = -1
ERM_SMOOTHING = 0.5


@numeric
class FilterResult:
    """Scores and candidates of one filtering pass.

    Wild samples are split into buckets, each with its own reference
    gradient, singular vectors (rows, unit norm) and threshold. The global
    pass has one bucket labeled `GLOBAL_BUCKET`; the class-conditional pass
    has one per predicted class, plus a global bucket for classes too small
    to be scored on their own."""

    reference_gradients: np.ndarray
    singular_vectors: list[np.ndarray]
    scores: np.ndarray
    thresholds: np.ndarray
    buckets: np.ndarray
    bucket_labels: np.ndarray = info(default_factory=lambda: np.array([GLOBAL_BUCKET]))

    def __post_init__(self) -> None:
        refs = as_matrix(self.reference_gradients, name='reference_gradients')
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        buckets = np.asarray(self.buckets, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.bucket_labels, dtype=np.int64).reshape(-1)
        vectors = [np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in self.singular_vectors]
        n_buckets = refs.shape[0]
        if not (len(vectors) == thresholds.size == labels.size == n_buckets):
            raise ArgumentError('every bucket needs a reference, vectors, a threshold and a label')
        if buckets.shape != scores.shape:
            raise ArgumentError(f'{buckets.size} bucket ids given for {scores.size} scores')
        if buckets.size and (buckets.min() < 0 or buckets.max() >= n_buckets):
            raise ArgumentError(f'bucket ids must lie in [0, {n_buckets})')
        if np.any(scores < 0):
            raise ArgumentError('filtering scores must be non-negative')
        for v in vectors:
            if v.shape[1] != refs.shape[1] or not all(is_unit(row) for row in v):
                raise ArgumentError('singular vectors must be unit rows of the gradient width')
        object.__setattr__(self, 'reference_gradients', refs)
        object.__setattr__(self, 'singular_vectors', vectors)
        object.__setattr__(self, 'scores', scores)
        object.__setattr__(self, 'thresholds', thresholds)
        object.__setattr__(self, 'buckets', buckets)
        object.__setattr__(self, 'bucket_labels', labels)

    @property
    def n_buckets(self) -> int:
        return self.thresholds.size

    def _single(self, what: str) -> None:
        if self.n_buckets != 1:
            raise StateError(f'{what} is per bucket; {self.n_buckets} buckets present')

    @property
    def reference_gradient(self) -> np.ndarray:
        self._single('the reference gradient')
        return self.reference_gradients[0]

    @property
    def singular_vector(self) -> np.ndarray:
        self._single('the singular vector')
        return self.singular_vectors[0][0]

    @property
    def threshold(self) -> float:
        self._single('the threshold')
        return float(self.thresholds[0])

    @property
    def sample_thresholds(self) -> np.ndarray:
        return self.thresholds[self.buckets]

    @lazyfield
    def candidate_indices(self) -> np.ndarray:
        return np.flatnonzero(self.scores > self.sample_thresholds)


@define
class SalConfig:
    """Filtering and training knobs; `erm` trains the reference classifier and
    `binary` the outlier head (with `binary.beta` weighing the binary loss
    against the retained ID cross-entropy when `joint` is on).

    The default `erm` smooths its labels: a classifier saturated on the ID
    data has vanishing gradients everywhere, outliers included."""

    quantile: float = 0.95
    class_conditional: bool = True
    n_singular_vectors: int = 1
    joint: bool = True
    binary_width: int = BINARY_WIDTH
    erm: TrainConfig = info(
        default_factory=lambda: TrainConfig(epochs=20, label_smoothing=ERM_SMOOTHING)
    )
    binary: TrainConfig = info(default_factory=lambda: TrainConfig(epochs=20, beta=1.0))

    def __post_init__(self) -> None:
        _check_quantile(self.quantile)
        if self.n_singular_vectors < 1:
            raise ArgumentError(
                f'n_singular_vectors must be positive, got {self.n_singular_vectors}'
            )
        if self.binary_width < 1:
            raise ArgumentError(f'binary_width must be positive, got {self.binary_width}')


def _check_quantile(quantile: float) -> None:
    if not 0 < quantile < 1:
        raise ArgumentError(f'quantile must lie in (0, 1), got {quantile}')


def reference_gradient(clf: MlpClassifier, id_data: LabeledSet) -> np.ndarray:
    """Mean final-layer gradient over the labeled ID pairs."""
    if not len(id_data):
        raise ArgumentError('reference gradient needs at least one ID sample')
    return per_sample_gradients(clf, id_data.points, id_data.labels).mean(axis=0)


def gradient_matrix(clf: MlpClassifier, wild: WildSet, ref: np.ndarray) -> np.ndarray:
    """Rows are per-sample gradients at the predicted labels minus `ref`."""
    ref = as_vector(ref, name='ref')
    width = (clf.feature_dim + 1) * clf.n_classes
    if ref.size != width:
        raise ArgumentError(f'reference gradient has {ref.size} entries, expected {width}')
    _, predicted = predict_batch(clf, wild.points)
    return per_sample_gradients(clf, wild.points, predicted) - ref


def _projection_scores(g: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return np.mean((g @ np.atleast_2d(vectors).T) ** 2, axis=1)


def filter_scores(
    g: np.ndarray, n_singular_vectors: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """τ_i = ⟨G_i, v⟩² for the top right singular vector v of G.

    With several vectors τ_i averages the squared projections uniformly and
    the vectors come back as rows; the count is capped at the rank bound
    min(rows, cols)."""
    g = as_matrix(g, name='gradient matrix')
    if not g.shape[0]:
        raise ArgumentError('gradient matrix must be non-empty')
    count = min(n_singular_vectors, *g.shape)
    vectors, _ = top_singular_vectors(g, count)
    tau = _projection_scores(g, vectors)
    return tau, vectors[0] if n_singular_vectors == 1 else vectors


def select_threshold(
    clf: MlpClassifier,
    id_data: LabeledSet,
    v: np.ndarray,
    ref: np.ndarray,
    quantile: float = 0.95,
) -> float:
    """T: nearest-rank `quantile` of the ID filtering scores, taken with the
    true labels and projected on the same `v`."""
    _check_quantile(quantile)
    if not len(id_data):
        raise ArgumentError('threshold selection needs at least one ID sample')
    g = per_sample_gradients(clf, id_data.points, id_data.labels) - as_vector(ref, name='ref')
    return nearest_rank(_projection_scores(g, v), quantile)


def filter_candidates(
    wild: WildSet, tau: np.ndarray, threshold: typing.Union[float, np.ndarray]
) -> np.ndarray:
    """Indices with τ_i > T in wild order; T may be given per sample."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    if tau.size != len(wild):
        raise ArgumentError(f'{tau.size} scores given for {len(wild)} wild samples')
    threshold = np.asarray(threshold, dtype=np.float64)
    if threshold.ndim and threshold.shape != tau.shape:
        raise ArgumentError('per-sample thresholds must match the scores')
    return np.flatnonzero(tau > threshold)


def _bucket(
    clf: MlpClassifier,
    id_data: LabeledSet,
    wild: WildSet,
    quantile: float,
    n_singular_vectors: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    ref = reference_gradient(clf, id_data)
    tau, v = filter_scores(gradient_matrix(clf, wild, ref), n_singular_vectors)
    threshold = select_threshold(clf, id_data, v, ref, quantile)
    return ref, np.atleast_2d(v), tau, threshold


def global_filter(
    clf: MlpClassifier,
    id_data: LabeledSet,
    wild: WildSet,
    quantile: float = 0.95,
    n_singular_vectors: int = 1,
) -> FilterResult:
    """One reference gradient, singular direction and threshold for all of
    the wild set."""
    if not len(wild):
        raise ArgumentError('wild set is empty')
    ref, vectors, tau, threshold = _bucket(clf, id_data, wild, quantile, n_singular_vectors)
    result = FilterResult(
        ref[None],
        [vectors],
        tau,
        np.array([threshold]),
        np.zeros(len(wild), dtype=np.int64),
    )
    logger.info(
        'global filter threshold=%.6g candidates=%d/%d',
        threshold,
        result.candidate_indices.size,
        len(wild),
    )
    return result


def class_conditional_filter(
    clf: MlpClassifier,
    id_data: LabeledSet,
    wild: WildSet,
    quantile: float = 0.95,
    n_singular_vectors: int = 1,
) -> FilterResult:
    """Filtering run separately per predicted class.

    Wild samples predicted as class k are scored against the reference
    gradient of the ID samples labeled k, with their own singular vectors and
    threshold. A class with fewer than 2 wild members, or without labeled ID
    samples, is scored by the global pass instead."""
    if not len(wild):
        raise ArgumentError('wild set is empty')
    _, predicted = predict_batch(clf, wild.points)
    id_counts = np.bincount(id_data.labels, minlength=clf.n_classes)
    wild_counts = np.bincount(predicted, minlength=clf.n_classes)
    refs, vectors, thresholds, labels = [], [], [], []
    scores = np.zeros(len(wild))
    buckets = np.full(len(wild), -1, dtype=np.int64)
    fallback = np.zeros(len(wild), dtype=bool)
    for k in np.flatnonzero(wild_counts):
        members = predicted == k
        if wild_counts[k] < 2 or not id_counts[k]:
            logger.warning(
                'class %d has %d wild and %d ID samples; scoring it globally',
                k,
                wild_counts[k],
                id_counts[k],
            )
            fallback |= members
            continue
        in_class = id_data.labels == k
        ref, v, tau, threshold = _bucket(
            clf,
            LabeledSet(id_data.points[in_class], id_data.labels[in_class]),
            WildSet(wild.points[members], wild.pi),
            quantile,
            n_singular_vectors,
        )
        buckets[members] = len(refs)
        scores[members] = tau
        refs.append(ref)
        vectors.append(v)
        thresholds.append(threshold)
        labels.append(int(k))
    if fallback.any():
        ref, v, tau, threshold = _bucket(clf, id_data, wild, quantile, n_singular_vectors)
        buckets[fallback] = len(refs)
        scores[fallback] = tau[fallback]
        refs.append(ref)
        vectors.append(v)
        thresholds.append(threshold)
        labels.append(GLOBAL_BUCKET)
    result = FilterResult(
        np.vstack(refs), vectors, scores, np.array(thresholds), buckets, np.array(labels)
    )
    logger.info(
        'class-conditional filter buckets=%d candidates=%d/%d',
        result.n_buckets,
        result.candidate_indices.size,
        len(wild),
    )
    return result


def err_rates(
    result: FilterResult,
    wild: WildSet,
    threshold: typing.Optional[float] = None,
) -> tuple[float, float]:
    """(err_in, err_out): the share of hidden-ID samples kept as candidates
    and the share of hidden-OOD samples left out.

    `threshold` overrides every bucket threshold, for sweeps."""
    flags = reveal_membership(wild)
    if flags.size != result.scores.size:
        raise ArgumentError(f'{result.scores.size} scores given for {flags.size} wild samples')
    limit = result.sample_thresholds if threshold is None else threshold
    kept = result.scores > limit
    err_in = float(np.mean(kept[~flags])) if (~flags).any() else 0.0
    err_out = float(np.mean(~kept[flags])) if flags.any() else 0.0
    return err_in, err_out


def run_filter(
    clf: MlpClassifier, id_data: LabeledSet, wild: WildSet, cfg: SalConfig
) -> FilterResult:
    pipeline = class_conditional_filter if cfg.class_conditional else global_filter
    return pipeline(clf, id_data, wild, cfg.quantile, cfg.n_singular_vectors)


def train_sal(
    id_data: LabeledSet, wild: WildSet, cfg: typing.Optional[SalConfig] = None
) -> tuple[MlpClassifier, FilterResult, BinaryHead]:
    """ERM, filtering, then the binary head with filtered candidates as
    negatives and ID data as positives.

    In joint mode the head reads the classifier's features and the copy of
    the classifier it owns keeps its ID cross-entropy while tuned."""
    cfg = cfg if cfg is not None else SalConfig()
    clf = train_erm(id_data, cfg.erm)
    result = run_filter(clf, id_data, wild, cfg)
    candidates = result.candidate_indices
    if not candidates.size:
        raise EmptyCandidateError(
            'no wild sample scored above its threshold; lower the quantile'
            f' (currently {cfg.quantile})'
        )
    head = train_binary(
        id_data.points,
        wild.points[candidates],
        cfg.binary,
        width=cfg.binary_width,
        backbone=clf if cfg.joint else None,
        positive_labels=id_data.labels if cfg.joint else None,
    )
    return clf, result, head


def save_filter_result(path: PathLike, result: FilterResult) -> None:
    sections = {
        'filter.reference_gradients': result.reference_gradients,
        'filter.scores': result.scores.reshape(1, -1),
        'filter.thresholds': result.thresholds.reshape(1, -1),
        'filter.buckets': result.buckets.astype(np.float64).reshape(1, -1),
        'filter.bucket_labels': result.bucket_labels.astype(np.float64).reshape(1, -1),
    }
    for index, vectors in enumerate(result.singular_vectors):
        sections[f'filter.v{index}'] = vectors
    write_sections(path, sections)


def load_filter_result(path: PathLike) -> FilterResult:
    sections = read_sections(path)
    required = (
        'filter.reference_gradients',
        'filter.scores',
        'filter.thresholds',
        'filter.buckets',
        'filter.bucket_labels',
    )
    for name in required:
        if name not in sections:
            raise FormatError(f'missing section {name!r}', str(path))
    n_buckets = sections['filter.thresholds'].size
    vectors = []
    for index in range(n_buckets):
        name = f'filter.v{index}'
        if name not in sections:
            raise FormatError(f'missing section {name!r}', str(path))
        vectors.append(sections[name])
    return FilterResult(
        sections['filter.reference_gradients'],
        vectors,
        sections['filter.scores'].reshape(-1),
        sections['filter.thresholds'].reshape(-1),
        sections['filter.buckets'].reshape(-1).astype(np.int64),
        sections['filter.bucket_labels'].reshape(-1).astype(np.int64),
    )
