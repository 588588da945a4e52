"""Detection metrics over scores oriented higher-is-ID.

These are also the only readers of a WildSet's ground-truth membership."""

import math
import typing

import numpy as np
from scipy.stats import rankdata

from gyver.ualk.datagen import WildSet
from gyver.ualk.exceptions import ArgumentError, StateError
from gyver.ualk.numerics import as_vector
from gyver.ualk.shortcuts import numeric

# guards ceil(tpr * n) against products like 0.95 * 100 = 95.00000000000001
_RANK_EPS = 1e-9


@numeric
class ScoreSets:
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, 'id_scores', as_vector(self.id_scores, name='id_scores'))
        object.__setattr__(
            self, 'ood_scores', as_vector(self.ood_scores, name='ood_scores')
        )

    def swapped(self) -> 'ScoreSets':
        return ScoreSets(self.ood_scores, self.id_scores)

    def _require_both(self) -> None:
        if not self.id_scores.size or not self.ood_scores.size:
            raise ArgumentError('ID and OOD score sets must both be non-empty')


def tpr_threshold(id_scores: np.ndarray, tpr: float = 0.95) -> float:
    """The ⌈tpr·n⌉-th largest ID score (nearest rank).

    Scores at or above it count as ID; no larger threshold keeps a `tpr`
    fraction of the ID scores."""
    if not 0 < tpr < 1:
        raise ArgumentError(f'tpr must lie in (0, 1), got {tpr}')
    ordered = np.sort(as_vector(id_scores, name='id_scores'))
    n = ordered.size
    if not n:
        raise ArgumentError('ID scores must be non-empty')
    need = max(1, math.ceil(tpr * n - _RANK_EPS))
    return float(ordered[n - need])


def nearest_rank(values: typing.Sequence[float], quantile: float) -> float:
    """Smallest value with at least ⌈quantile·n⌉ values at or below it."""
    if not 0 < quantile < 1:
        raise ArgumentError(f'quantile must lie in (0, 1), got {quantile}')
    ordered = np.sort(as_vector(values, name='values'))
    if not ordered.size:
        raise ArgumentError('cannot take a quantile of no values')
    rank = max(1, math.ceil(quantile * ordered.size - _RANK_EPS))
    return float(ordered[rank - 1])


def fpr_at_tpr(s: ScoreSets, tpr: float = 0.95) -> float:
    """Fraction of OOD scores accepted as ID at the `tpr` operating point."""
    s._require_both()
    threshold = tpr_threshold(s.id_scores, tpr)
    return float(np.mean(s.ood_scores >= threshold))


def auroc(s: ScoreSets) -> float:
    """P(id score > ood score), ties counted half, via the rank-sum statistic."""
    s._require_both()
    n_id, n_ood = s.id_scores.size, s.ood_scores.size
    ranks = rankdata(np.concatenate((s.id_scores, s.ood_scores)), method='average')
    u = float(np.sum(ranks[:n_id])) - n_id * (n_id + 1) / 2.0
    return u / (n_id * n_ood)


def reveal_membership(wild: WildSet) -> np.ndarray:
    """Copy of the hidden OOD flags, for evaluation only."""
    flags = wild._hidden_is_ood
    if flags is None:
        raise StateError('wild set carries no ground-truth membership')
    return flags.copy()


def reveal_direction(wild: WildSet) -> np.ndarray:
    direction = wild._hidden_direction
    if direction is None:
        raise StateError('wild set carries no hidden direction')
    return direction.copy()


def score_sets(scores: typing.Sequence[float], wild: WildSet) -> ScoreSets:
    """Splits per-row `scores` of `wild` by hidden membership."""
    scores = as_vector(scores, name='scores')
    flags = reveal_membership(wild)
    if scores.size != flags.size:
        raise ArgumentError(f'{scores.size} scores given for {flags.size} wild rows')
    return ScoreSets(scores[~flags], scores[flags])


def contamination(indices: typing.Sequence[int], wild: WildSet) -> float:
    """Fraction of the selected wild rows that are actually in-distribution.

    An empty selection has no contamination."""
    indices = np.asarray(indices, dtype=np.int64)
    if not indices.size:
        return 0.0
    flags = reveal_membership(wild)
    return float(np.mean(~flags[indices]))
