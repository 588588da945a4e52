"""von Mises-Fisher mixtures on the unit hypersphere: densities, the shaping
loss with learnable concentrations, EMA prototypes and the two scores."""

import logging
import math
import os
import typing

import numpy as np
from gyver.attrs import define
from lazyfields import lazyfield
from scipy.special import gammaln, log_softmax, softmax

from gyver.ualk.datagen import LabeledSet
from gyver.ualk.exceptions import ArgumentError, FormatError, SingularityError, StateError
from gyver.ualk.io.container import read_sections, write_sections
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.model.mlp import Mlp, MlpClassifier
from gyver.ualk.model.optim import Sgd, learning_rate
from gyver.ualk.model.persist import mlp_from_sections, mlp_sections
from gyver.ualk.model.training import check_classes, check_finite, cross_entropy, minibatches
from gyver.ualk.numerics import (
    RngState,
    as_matrix,
    as_vector,
    bessel_ratio,
    is_unit,
    knn_distance,
    knn_distances,
    log_bessel_i,
    normalize_rows,
)
from gyver.ualk.shortcuts import numeric
from gyver.ualk.utils.typedef import PathLike

logger = logging.getLogger(__name__)

KAPPA_MIN = 1e-3
KAPPA_MAX = 1e4
UNIT_TOL = 1e-8


def log_normalizer(kappa: float, d: int) -> float:
    """log Z_d(κ), with Z_d(κ) = κ^(d/2−1) / ((2π)^(d/2) I_{d/2−1}(κ)).

    At κ = 0 this is minus the log surface area of the sphere."""
    if d < 2:
        raise ArgumentError(f'sphere dimension must be at least 2, got {d}')
    if kappa < 0:
        raise ArgumentError(f'kappa must be non-negative, got {kappa}')
    order = d / 2.0 - 1.0
    if kappa == 0:
        return float(gammaln(d / 2.0) - math.log(2.0) - (d / 2.0) * math.log(math.pi))
    return order * math.log(kappa) - (d / 2.0) * math.log(2.0 * math.pi) - log_bessel_i(
        order, kappa
    )


def log_normalizer_derivative(kappa: float, d: int) -> float:
    """d/dκ log Z_d(κ) = −I_{d/2}(κ) / I_{d/2−1}(κ)."""
    return -bessel_ratio(d / 2.0 - 1.0, kappa)


def _check_unit(v: np.ndarray, name: str) -> np.ndarray:
    if not is_unit(v, UNIT_TOL):
        raise ArgumentError(f'{name} must have unit norm')
    return v


def vmf_log_density(r: np.ndarray, mu: np.ndarray, kappa: float, d: int) -> float:
    r = _check_unit(as_vector(r, name='r'), 'r')
    mu = _check_unit(as_vector(mu, name='mu'), 'mu')
    if r.size != d or mu.size != d:
        raise ArgumentError(f'vectors must have {d} entries')
    return log_normalizer(kappa, d) + kappa * float(mu @ r)


@numeric
class VmfMixture:
    """Class prototypes μ_c (unit rows), concentrations κ_c and the EMA
    factor α."""

    prototypes: np.ndarray
    kappas: np.ndarray
    alpha: float = 0.95
    trained: bool = False

    def __post_init__(self) -> None:
        prototypes = as_matrix(self.prototypes, name='prototypes')
        kappas = as_vector(self.kappas, name='kappas')
        if kappas.size != prototypes.shape[0]:
            raise ArgumentError(
                f'{kappas.size} concentrations given for {prototypes.shape[0]} prototypes'
            )
        if prototypes.shape[1] < 2:
            raise ArgumentError('prototypes must live on a sphere of dimension >= 2')
        if not is_unit(prototypes, 1e-10):
            raise ArgumentError('prototypes must have unit norm')
        if np.any(kappas <= 0):
            raise ArgumentError('concentrations must be positive')
        if not 0 <= self.alpha <= 1:
            raise ArgumentError(f'alpha must lie in [0, 1], got {self.alpha}')
        object.__setattr__(self, 'prototypes', prototypes)
        object.__setattr__(self, 'kappas', kappas)

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @lazyfield
    def log_normalizers(self) -> np.ndarray:
        return np.array([log_normalizer(float(kappa), self.dim) for kappa in self.kappas])

    def log_densities(self, r: np.ndarray) -> np.ndarray:
        """Per-class log densities, rows of `r` against every prototype."""
        r = as_matrix(r, name='r')
        if r.shape[1] != self.dim:
            raise ArgumentError(f'embeddings have {r.shape[1]} entries, expected {self.dim}')
        _check_unit(r, 'embeddings')
        return self.log_normalizers + (r @ self.prototypes.T) * self.kappas

    def replace(self, **changes: typing.Any) -> 'VmfMixture':
        values = {
            'prototypes': self.prototypes,
            'kappas': self.kappas,
            'alpha': self.alpha,
            'trained': self.trained,
        }
        values.update(changes)
        return VmfMixture(**values)


def vmf_posterior(r: np.ndarray, mixture: VmfMixture) -> np.ndarray:
    """softmax_c(log Z_d(κ_c) + κ_c⟨μ_c, r⟩)."""
    return softmax(mixture.log_densities(as_vector(r, name='r'))[0])


def ema_update(mixture: VmfMixture, r: np.ndarray, c: int) -> VmfMixture:
    """μ_c ← normalize(α·μ_c + (1 − α)·r); a zero blend leaves μ_c as is."""
    r = _check_unit(as_vector(r, name='r'), 'r')
    if not 0 <= c < mixture.n_classes:
        raise ArgumentError(f'class {c} outside [0, {mixture.n_classes})')
    prototypes = mixture.prototypes.copy()
    if not _ema_inplace(prototypes, r, c, mixture.alpha):
        return mixture
    return mixture.replace(prototypes=prototypes)


def _ema_inplace(prototypes: np.ndarray, r: np.ndarray, c: int, alpha: float) -> bool:
    if alpha == 1:
        return True
    blend = alpha * prototypes[c] + (1.0 - alpha) * r
    norm = np.linalg.norm(blend)
    if norm == 0:
        logger.warning('skipping EMA update of prototype %d: blend is the zero vector', c)
        return False
    prototypes[c] = blend / norm
    return True


@numeric
class ShapingGradients:
    embeddings: np.ndarray
    log_kappas: np.ndarray
    prototypes: np.ndarray


def shaping_loss(
    z: np.ndarray, labels: np.ndarray, mixture: VmfMixture
) -> tuple[float, ShapingGradients]:
    """Mean −log p_y(r) over rows, r = z/‖z‖, with the gradients on the raw
    embeddings z, on log κ and on the prototypes."""
    z = as_matrix(z, name='z')
    labels = np.asarray(labels, dtype=np.int64)
    n = z.shape[0]
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ArgumentError('cannot normalize a zero embedding')
    r = z / norms
    kappas = mixture.kappas
    cosines = r @ mixture.prototypes.T
    logits = mixture.log_normalizers + cosines * kappas
    rows = np.arange(n)
    loss = -float(np.mean(log_softmax(logits, axis=1)[rows, labels]))
    d_logits = softmax(logits, axis=1)
    d_logits[rows, labels] -= 1.0
    d_logits /= n
    d_r = (d_logits * kappas) @ mixture.prototypes
    d_z = (d_r - np.sum(d_r * r, axis=1, keepdims=True) * r) / norms
    dlogz = np.array([log_normalizer_derivative(float(k), mixture.dim) for k in kappas])
    d_kappas = np.sum(d_logits * (dlogz + cosines), axis=0)
    d_prototypes = (d_logits * kappas).T @ r
    return loss, ShapingGradients(d_z, d_kappas * kappas, d_prototypes)


@define
class SirenConfig:
    """Representation shaping settings; `fixed_kappa` freezes κ at
    `kappa_init`."""

    projection_dim: int = 16
    beta: float = 1.5
    kappa_init: float = 10.0
    alpha: float = 0.95
    fixed_kappa: bool = False
    prototype_init: str = 'mean'

    def __post_init__(self) -> None:
        if self.projection_dim < 2:
            raise ArgumentError(
                f'projection_dim must be at least 2, got {self.projection_dim}'
            )
        if self.beta < 0:
            raise ArgumentError(f'beta must be non-negative, got {self.beta}')
        if not KAPPA_MIN <= self.kappa_init <= KAPPA_MAX:
            raise ArgumentError(f'kappa_init must lie in [{KAPPA_MIN}, {KAPPA_MAX}]')
        if self.prototype_init not in ('mean', 'random'):
            raise ArgumentError(f'unknown prototype_init {self.prototype_init!r}')


class SirenModel:
    """Classifier backbone plus a linear projection onto the sphere."""

    __slots__ = ('classifier', 'projection')

    def __init__(self, classifier: MlpClassifier, projection: Mlp) -> None:
        if projection.dims[0] != classifier.feature_dim:
            raise ArgumentError('projection input does not match classifier features')
        self.classifier = classifier
        self.projection = projection

    @property
    def dim(self) -> int:
        return self.projection.dims[-1]

    def embed(self, x: np.ndarray) -> np.ndarray:
        return normalize_rows(self.projection(self.classifier.features(x)))


def _initial_prototypes(
    z: np.ndarray, labels: np.ndarray, n_classes: int, mode: str, rng: RngState
) -> np.ndarray:
    prototypes = normalize_rows(rng.normal((n_classes, z.shape[1])))
    if mode == 'random':
        return prototypes
    r = normalize_rows(z)
    for k in range(n_classes):
        mean = r[labels == k].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm > 0:
            prototypes[k] = mean / norm
    return prototypes


def train_siren(
    data: LabeledSet,
    cfg: TrainConfig,
    siren: typing.Optional[SirenConfig] = None,
) -> tuple[SirenModel, VmfMixture]:
    """Trains classifier and projection with cross-entropy plus
    `siren.beta`·shaping loss, updating prototypes by EMA after every step.

    Prototypes start from normalized class means of the untrained embeddings
    (or random unit vectors); κ starts at `siren.kappa_init` and is learned
    through log κ, clamped to [1e-3, 1e4]."""
    siren = siren if siren is not None else SirenConfig()
    n_classes = check_classes(data)
    rng = RngState(cfg.seed).spawn('siren')
    clf = MlpClassifier.initialize(data.dim, cfg.hidden_dims, n_classes, rng.spawn('init'))
    projection = Mlp.initialize([clf.feature_dim, siren.projection_dim], rng.spawn('projection'))
    model = SirenModel(clf, projection)
    warmup = projection(clf.features(data.points))
    prototypes = _initial_prototypes(
        warmup, data.labels, n_classes, siren.prototype_init, rng.spawn('prototypes')
    )
    log_kappas = np.full(n_classes, math.log(siren.kappa_init))
    params = clf.net.parameters() + projection.parameters()
    decay = clf.net.decay_mask() + projection.decay_mask()
    if not siren.fixed_kappa:
        params.append(log_kappas)
        decay.append(False)
    optimizer = Sgd.from_config(params, decay, cfg)
    shuffle = rng.spawn('shuffle')
    loss = math.nan
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total = 0.0
        for batch in minibatches(len(data), cfg.batch_size, shuffle):
            labels = data.labels[batch]
            logits, acts = clf.net.forward(data.points[batch])
            z, proj_acts = projection.forward(acts[-1])
            mixture = VmfMixture(prototypes, np.exp(log_kappas), siren.alpha)
            ce, d_logits = cross_entropy(logits, labels)
            shaping, grads = shaping_loss(z, labels, mixture)
            proj_grads, d_features = projection.backward(
                proj_acts, siren.beta * grads.embeddings
            )
            clf_grads, _ = clf.net.backward(acts, d_logits, grad_penultimate=d_features)
            step_grads = clf_grads + proj_grads
            if not siren.fixed_kappa:
                step_grads.append(siren.beta * grads.log_kappas)
            optimizer.step(step_grads, lr)
            np.clip(log_kappas, math.log(KAPPA_MIN), math.log(KAPPA_MAX), out=log_kappas)
            for row, label in zip(normalize_rows(z), labels):
                _ema_inplace(prototypes, row, int(label), siren.alpha)
            total += (ce + siren.beta * shaping) * batch.size
        loss = total / len(data)
        check_finite(loss, epoch, clf.net, projection)
        logger.debug(
            'siren epoch=%d loss=%.6f kappa=%s', epoch, loss, np.round(np.exp(log_kappas), 3)
        )
    logger.info('siren finished epochs=%d loss=%.6f', cfg.epochs, loss)
    mixture = VmfMixture(prototypes, np.exp(log_kappas), siren.alpha, trained=True)
    return model, mixture


def estimate_kappa(embeddings: np.ndarray, d: typing.Optional[int] = None) -> float:
    """κ̂ = R̄(d − R̄²)/(1 − R̄²), R̄ the norm of the mean unit embedding."""
    r = as_matrix(embeddings, name='embeddings')
    d = r.shape[1] if d is None else d
    if r.shape[1] != d:
        raise ArgumentError(f'embeddings have {r.shape[1]} entries, expected {d}')
    if r.shape[0] < 2:
        raise ArgumentError('estimating kappa needs at least 2 embeddings')
    _check_unit(r, 'embeddings')
    mean_norm = float(np.linalg.norm(r.mean(axis=0)))
    if mean_norm >= 1.0 - 1e-12:
        raise SingularityError(
            f'mean resultant length {mean_norm} is 1, kappa is unbounded', mean_norm
        )
    return mean_norm * (d - mean_norm**2) / (1.0 - mean_norm**2)


def with_estimated_kappa(
    mixture: VmfMixture, embeddings: np.ndarray, labels: typing.Sequence[int]
) -> VmfMixture:
    """Replaces κ_c by κ̂_c estimated from the class-c embeddings."""
    r = as_matrix(embeddings, name='embeddings')
    labels = np.asarray(labels, dtype=np.int64)
    kappas = np.array(
        [
            min(max(estimate_kappa(r[labels == k], mixture.dim), KAPPA_MIN), KAPPA_MAX)
            for k in range(mixture.n_classes)
        ]
    )
    return mixture.replace(kappas=kappas)


def _require_trained(mixture: VmfMixture) -> None:
    if not mixture.trained:
        raise StateError('vMF mixture has not been trained')


def vmf_log_scores(r: np.ndarray, mixture: VmfMixture) -> np.ndarray:
    _require_trained(mixture)
    return mixture.log_densities(r).max(axis=1)


def vmf_log_score(r: np.ndarray, mixture: VmfMixture) -> float:
    return float(vmf_log_scores(as_vector(r, name='r'), mixture)[0])


def vmf_score(r: np.ndarray, mixture: VmfMixture) -> float:
    """max_c Z_d(κ_c)·exp(κ_c⟨μ_c, r⟩); higher means in-distribution.

    Densities past the float range come back as inf (and below it as 0);
    `vmf_log_score` keeps such inputs apart."""
    with np.errstate(over='ignore', under='ignore'):
        return float(np.exp(vmf_log_score(r, mixture)))


def knn_score(r: np.ndarray, bank: np.ndarray, k: int, exclude_self: bool = False) -> float:
    """−‖r − r_(k)‖ against a bank of ID embeddings; higher means in-distribution."""
    return -knn_distance(r, bank, k, exclude_self)


def knn_scores(
    r: np.ndarray, bank: np.ndarray, k: int, exclude_self: bool = False
) -> np.ndarray:
    return -knn_distances(r, bank, k, exclude_self)


def save_mixture(path: PathLike, mixture: VmfMixture) -> None:
    write_sections(
        path,
        {
            'vmf.prototypes': mixture.prototypes,
            'vmf.kappas': mixture.kappas.reshape(1, -1),
            'vmf.alpha': np.array([[mixture.alpha]]),
            'vmf.dim': np.array([[float(mixture.dim)]]),
        },
    )


def load_mixture(path: PathLike) -> VmfMixture:
    sections = read_sections(path)
    missing = {'vmf.prototypes', 'vmf.kappas', 'vmf.alpha', 'vmf.dim'} - set(sections)
    if missing:
        raise FormatError(f'missing sections {sorted(missing)}', os.fspath(path))
    prototypes = sections['vmf.prototypes']
    if int(sections['vmf.dim'][0, 0]) != prototypes.shape[1]:
        raise FormatError('stored sphere dimension does not match the prototypes')
    return VmfMixture(
        prototypes,
        sections['vmf.kappas'].reshape(-1),
        float(sections['vmf.alpha'][0, 0]),
        trained=True,
    )


def save_siren(path: PathLike, model: SirenModel) -> None:
    sections = mlp_sections('classifier', model.classifier.net)
    sections.update(mlp_sections('projection', model.projection))
    write_sections(path, sections)


def load_siren(path: PathLike) -> SirenModel:
    sections = read_sections(path)
    return SirenModel(
        MlpClassifier(mlp_from_sections('classifier', sections)),
        mlp_from_sections('projection', sections),
    )
