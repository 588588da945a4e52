import logging
import math
import typing

import numpy as np
from gyver.attrs import info

from gyver.ualk.exceptions import ArgumentError
from gyver.ualk.numerics import (
    RngState,
    as_labels,
    as_matrix,
    as_vector,
    cholesky_sample,
    is_unit,
    normalize_rows,
)
from gyver.ualk.shortcuts import numeric

logger = logging.getLogger(__name__)

SAL_TOY_MEANS = np.array([[-2.0, 0.0], [2.0, 0.0], [0.0, 2.0 * math.sqrt(3.0)]])
SAL_TOY_COV = 0.25 * np.eye(2)
SAL_OOD_CENTER = np.array([0.0, 2.0 / math.sqrt(3.0)])
SAL_OOD_POOL = 100_000
SAL_OOD_KEPT = 1_000

VMF_TOY_CENTROIDS = np.array(
    [
        [0.0, 0.0, 1.0],
        [math.sqrt(3.0) / 2.0, 0.0, -0.5],
        [-math.sqrt(3.0) / 2.0, 0.0, -0.5],
    ]
)


@numeric
class LabeledSet:
    """Labeled in-distribution points, `labels[i]` in [0, n_classes)."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        points = as_matrix(self.points, name='points')
        labels = as_labels(self.labels)
        if labels.size != points.shape[0]:
            raise ArgumentError(
                f'{labels.size} labels given for {points.shape[0]} points'
            )
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'labels', labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def of_class(self, k: int) -> np.ndarray:
        return self.points[self.labels == k]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@numeric
class WildSet:
    """Unlabeled Huber mixture (1 − pi)·P_in + pi·P_out.

    Ground-truth membership, when known, is kept in private slots; only the
    evaluation helpers of `gyver.ualk.metrics` read it back. `resampled` is set
    when a source was too small and rows were drawn with replacement."""

    points: np.ndarray
    pi: float
    _hidden_is_ood: typing.Optional[np.ndarray] = info(default=None, repr=False)
    _hidden_direction: typing.Optional[np.ndarray] = info(default=None, repr=False)
    resampled: bool = False

    def __post_init__(self) -> None:
        points = as_matrix(self.points, name='points')
        flags = self._hidden_is_ood
        if flags is not None:
            flags = np.asarray(flags, dtype=bool)
            if flags.shape != (points.shape[0],):
                raise ArgumentError(
                    f'{flags.size} membership flags given for {points.shape[0]} points'
                )
        if not 0 <= self.pi <= 1:
            raise ArgumentError(f'pi must lie in [0, 1], got {self.pi}')
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, '_hidden_is_ood', flags)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@numeric
class SalToy:
    train: LabeledSet
    wild: WildSet
    test_id: LabeledSet
    test_ood: np.ndarray


@numeric
class VosToy:
    train: LabeledSet
    test: LabeledSet
    ring: np.ndarray


def make_gaussian_classes(
    means: np.ndarray, cov: np.ndarray, per_class: int, rng: RngState
) -> LabeledSet:
    """Draws `per_class` points from N(means[k], cov) for every class k,
    grouped by class in index order."""
    means = as_matrix(means, name='means')
    if per_class < 1:
        raise ArgumentError(f'per_class must be positive, got {per_class}')
    blocks = [cholesky_sample(mean, cov, per_class, rng) for mean in means]
    labels = np.repeat(np.arange(means.shape[0]), per_class)
    return LabeledSet(np.vstack(blocks), labels)


def make_sal_ood(scenario: int, rng: RngState) -> np.ndarray:
    """Outliers of the two wild scenarios of the three-Gaussian toy.

    Scenario 1 keeps the 1,000 points farthest from the ID centroid out of a
    100,000-point N(centroid, 7·I) pool drawn from its own sub-stream.
    Scenario 2 is a 1,000-point N([10, 2/√3], 0.25·I) cluster."""
    if scenario == 1:
        pool = cholesky_sample(
            SAL_OOD_CENTER, 7.0 * np.eye(2), SAL_OOD_POOL, rng.spawn('sal-ood-pool')
        )
        radius = np.linalg.norm(pool - SAL_OOD_CENTER, axis=1)
        order = np.argsort(-radius, kind='stable')
        return pool[order[:SAL_OOD_KEPT]]
    if scenario == 2:
        center = np.array([10.0, SAL_OOD_CENTER[1]])
        return cholesky_sample(center, SAL_TOY_COV, SAL_OOD_KEPT, rng)
    raise ArgumentError(f'scenario must be 1 or 2, got {scenario}')


def _draw_rows(
    source: np.ndarray, count: int, rng: RngState, name: str
) -> tuple[np.ndarray, bool]:
    if count <= source.shape[0]:
        return source[rng.choice(source.shape[0], count, replace=False)], False
    logger.warning(
        'sampling %d %s rows with replacement from %d available',
        count,
        name,
        source.shape[0],
    )
    return source[rng.choice(source.shape[0], count, replace=True)], True


def make_wild(
    id_points: np.ndarray,
    ood_points: np.ndarray,
    pi: float,
    m: int,
    rng: RngState,
    *,
    fixed_count: bool = False,
) -> WildSet:
    """Mixes `m` unlabeled rows, each OOD with probability `pi`.

    With `fixed_count` exactly round(pi·m) rows are OOD, at random positions."""
    id_points = np.asarray(id_points, dtype=np.float64)
    ood_points = np.asarray(ood_points, dtype=np.float64)
    if id_points.size == 0 or ood_points.size == 0:
        raise ArgumentError('wild mixture sources must be non-empty')
    id_points = as_matrix(id_points, name='id_points')
    ood_points = as_matrix(ood_points, name='ood_points')
    if id_points.shape[1] != ood_points.shape[1]:
        raise ArgumentError(
            f'ID rows have {id_points.shape[1]} columns, OOD rows {ood_points.shape[1]}'
        )
    if not 0 < pi <= 1:
        raise ArgumentError(f'pi must lie in (0, 1], got {pi}')
    if m < 1:
        raise ArgumentError(f'm must be positive, got {m}')
    if fixed_count:
        flags = np.zeros(m, dtype=bool)
        flags[rng.permutation(m)[: int(round(pi * m))]] = True
    else:
        flags = rng.bernoulli(pi, m)
    n_ood = int(flags.sum())
    ood_rows, ood_resampled = _draw_rows(ood_points, n_ood, rng, 'OOD')
    id_rows, id_resampled = _draw_rows(id_points, m - n_ood, rng, 'ID')
    points = np.empty((m, id_points.shape[1]))
    points[flags] = ood_rows
    points[~flags] = id_rows
    return WildSet(
        points, pi, hidden_is_ood=flags, resampled=ood_resampled or id_resampled
    )


def make_subspace_mixture(
    n: int, d: int, pi: float, shift: float, rng: RngState
) -> WildSet:
    """Inliers from N(0, I), outliers from N(shift·u, I) for a hidden unit u."""
    if d < 2:
        raise ArgumentError(f'd must be at least 2, got {d}')
    if shift < 0:
        raise ArgumentError(f'shift must be non-negative, got {shift}')
    if not 0 < pi <= 1:
        raise ArgumentError(f'pi must lie in (0, 1], got {pi}')
    direction = rng.normal(d)
    direction /= np.linalg.norm(direction)
    flags = rng.bernoulli(pi, n)
    points = rng.normal((n, d)) + shift * np.outer(flags, direction)
    return WildSet(points, pi, hidden_is_ood=flags, hidden_direction=direction)


def make_sal_toy(
    scenario: int,
    rng: RngState,
    *,
    per_class: int = 1_000,
    wild_per_class: int = 3_000,
    test_per_class: int = 1_000,
) -> SalToy:
    """The three-Gaussian wild-filtering toy: ID training set, a wild set of
    3·`wild_per_class` ID rows plus the scenario's 1,000 outliers, and
    held-out ID/OOD draws for evaluation."""
    train = make_gaussian_classes(SAL_TOY_MEANS, SAL_TOY_COV, per_class, rng.spawn('train'))
    wild_id = make_gaussian_classes(
        SAL_TOY_MEANS, SAL_TOY_COV, wild_per_class, rng.spawn('wild-id')
    )
    wild_ood = make_sal_ood(scenario, rng.spawn('wild-ood'))
    m = wild_id.points.shape[0] + wild_ood.shape[0]
    wild = make_wild(
        wild_id.points,
        wild_ood,
        wild_ood.shape[0] / m,
        m,
        rng.spawn('wild-mix'),
        fixed_count=True,
    )
    test_id = make_gaussian_classes(
        SAL_TOY_MEANS, SAL_TOY_COV, test_per_class, rng.spawn('test-id')
    )
    test_ood = make_sal_ood(scenario, rng.spawn('test-ood'))
    return SalToy(train, wild, test_id, test_ood)


def make_ring(
    n: int, radius: float, center: typing.Optional[np.ndarray] = None
) -> np.ndarray:
    """`n` evenly spaced 2-D points on a circle."""
    if n < 1 or radius <= 0:
        raise ArgumentError('ring needs n >= 1 and a positive radius')
    center = SAL_OOD_CENTER if center is None else as_vector(center, name='center')
    angles = 2.0 * np.pi * np.arange(n) / n
    return center + radius * np.column_stack((np.cos(angles), np.sin(angles)))


def make_vos_toy(
    rng: RngState,
    *,
    per_class: int = 1_000,
    test_per_class: int = 500,
    ring_points: int = 360,
    ring_radius: float = 8.0,
) -> VosToy:
    train = make_gaussian_classes(SAL_TOY_MEANS, SAL_TOY_COV, per_class, rng.spawn('train'))
    test = make_gaussian_classes(
        SAL_TOY_MEANS, SAL_TOY_COV, test_per_class, rng.spawn('test')
    )
    return VosToy(train, test, make_ring(ring_points, ring_radius))


def _wood_cosines(kappa: float, d: int, n: int, rng: RngState) -> np.ndarray:
    # Wood's rejection sampler for w = <mu, x>
    dm1 = d - 1.0
    b = dm1 / (2.0 * kappa + math.sqrt(4.0 * kappa**2 + dm1**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + dm1 * math.log(1.0 - x0**2)
    accepted: list[np.ndarray] = []
    remaining = n
    while remaining > 0:
        batch = max(remaining * 2, 16)
        z = rng.beta(dm1 / 2.0, dm1 / 2.0, batch)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(batch)
        keep = kappa * w + dm1 * np.log(1.0 - x0 * w) - c >= np.log(u)
        accepted.append(w[keep][:remaining])
        remaining -= accepted[-1].size
    return np.concatenate(accepted)


def sample_vmf(mu: np.ndarray, kappa: float, n: int, rng: RngState) -> np.ndarray:
    """Draws `n` unit vectors from vMF(mu, kappa) on the sphere in R^d.

    The cosine to `mu` comes from Wood's rejection sampler and the tangent
    direction is a normalized Gaussian draw orthogonal to `mu`."""
    mu = as_vector(mu, name='mu')
    if not is_unit(mu):
        raise ArgumentError('mu must be a unit vector')
    if kappa < 0:
        raise ArgumentError(f'kappa must be non-negative, got {kappa}')
    d = mu.size
    if kappa == 0:
        return normalize_rows(rng.normal((n, d)))
    w = _wood_cosines(kappa, d, n, rng)
    tangent = rng.normal((n, d))
    tangent -= np.outer(tangent @ mu, mu)
    tangent = normalize_rows(tangent)
    return w[:, None] * mu + np.sqrt(np.clip(1.0 - w**2, 0.0, None))[:, None] * tangent


def make_vmf_classes(
    centroids: np.ndarray, kappa: float, per_class: int, rng: RngState
) -> LabeledSet:
    centroids = normalize_rows(as_matrix(centroids, name='centroids'))
    blocks = [sample_vmf(mu, kappa, per_class, rng) for mu in centroids]
    labels = np.repeat(np.arange(centroids.shape[0]), per_class)
    return LabeledSet(np.vstack(blocks), labels)
