import logging
import math
import typing

import numpy as np
from scipy.special import expit

from gyver.ualk.datagen import LabeledSet
from gyver.ualk.exceptions import ArgumentError, StateError
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.model.energy import EnergyHead, energies, logit_uncertainty_loss
from gyver.ualk.model.mlp import MlpClassifier
from gyver.ualk.model.optim import Sgd, learning_rate
from gyver.ualk.model.training import check_classes, check_finite, cross_entropy, minibatches
from gyver.ualk.numerics import RngState
from gyver.ualk.synthesis import ClassQueues, SynthesisConfig, sample_virtual_outliers

logger = logging.getLogger(__name__)

QUEUE_CAPACITY = 1_000


class VosModel:
    """Classifier plus energy head trained with virtual outliers."""

    __slots__ = ('classifier', 'head')

    def __init__(self, classifier: MlpClassifier, head: EnergyHead) -> None:
        if classifier.n_classes != head.n_classes:
            raise ArgumentError('energy head and classifier disagree on the class count')
        self.classifier = classifier
        self.head = head

    def energy(self, x: np.ndarray) -> np.ndarray:
        return energies(self.classifier.logits(x), self.head)

    def id_probability(self, x: np.ndarray) -> np.ndarray:
        """σ(−φ(E(x))), near 1 on in-distribution inputs."""
        if not self.head.trained:
            raise StateError('energy head has not been trained')
        return expit(-self.head.uncertainty_logit(self.energy(x)))


def energy_score(
    clf: MlpClassifier, x: np.ndarray, head: typing.Optional[EnergyHead] = None
) -> np.ndarray:
    """Negative energy, higher for in-distribution inputs.

    Without a head all class weights are 1 and this is logsumexp of the logits."""
    head = head if head is not None else EnergyHead.initialize(clf.n_classes, RngState(0))
    return -energies(clf.logits(x), head)


def train_vos(
    data: LabeledSet,
    cfg: TrainConfig,
    synthesis: typing.Optional[SynthesisConfig] = None,
    *,
    queue_capacity: int = QUEUE_CAPACITY,
) -> VosModel:
    """Joint training with virtual outlier synthesis.

    Cross-entropy runs from the first epoch. From `cfg.start_epoch` on, once
    every class queue of penultimate features is full, each batch fits tied
    class Gaussians to the queues, samples `synthesis.n_outliers` virtual
    outliers per class from their low-likelihood region and adds
    `cfg.beta`·uncertainty loss; outliers pass through the final layer only."""
    synthesis = synthesis if synthesis is not None else SynthesisConfig()
    n_classes = check_classes(data)
    rng = RngState(cfg.seed).spawn('vos')
    clf = MlpClassifier.initialize(data.dim, cfg.hidden_dims, n_classes, rng.spawn('init'))
    head = EnergyHead.initialize(n_classes, rng.spawn('head'))
    params = clf.net.parameters() + head.parameters()
    decay = clf.net.decay_mask() + head.decay_mask()
    optimizer = Sgd.from_config(params, decay, cfg)
    queues = ClassQueues(n_classes, clf.feature_dim, queue_capacity)
    shuffle, sampler = rng.spawn('shuffle'), rng.spawn('outliers')
    head_weight, head_bias = clf.head_weight, clf.head_bias
    loss = math.nan
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total = 0.0
        synthesized = 0
        for batch in minibatches(len(data), cfg.batch_size, shuffle):
            labels = data.labels[batch]
            logits, acts = clf.net.forward(data.points[batch])
            features = acts[-1]
            queues.push(features, labels)
            step_loss, d_logits = cross_entropy(logits, labels)
            head_grads = [np.zeros_like(param) for param in head.parameters()]
            d_head_weight = np.zeros_like(head_weight)
            d_head_bias = np.zeros_like(head_bias)
            if epoch >= cfg.start_epoch and queues.is_full():
                gaussians = queues.estimate()
                outliers = np.vstack(
                    [
                        sample_virtual_outliers(gaussians, synthesis, k, sampler)
                        for k in range(n_classes)
                    ]
                )
                outlier_logits = outliers @ head_weight + head_bias
                unc, grads = logit_uncertainty_loss(logits, outlier_logits, head)
                step_loss += cfg.beta * unc
                d_logits = d_logits + cfg.beta * grads.id_logits
                d_head_weight = cfg.beta * outliers.T @ grads.outlier_logits
                d_head_bias = cfg.beta * grads.outlier_logits.sum(axis=0)
                head_grads = [cfg.beta * grads.log_weights] + [
                    cfg.beta * grad for grad in grads.phi
                ]
                synthesized += outliers.shape[0]
            clf_grads, _ = clf.net.backward(acts, d_logits)
            clf_grads[-2] = clf_grads[-2] + d_head_weight
            clf_grads[-1] = clf_grads[-1] + d_head_bias
            optimizer.step(clf_grads + head_grads, lr)
            total += step_loss * batch.size
        loss = total / len(data)
        check_finite(loss, epoch, clf.net, head.phi)
        logger.debug(
            'vos epoch=%d loss=%.6f virtual_outliers=%d', epoch, loss, synthesized
        )
    logger.info('vos finished epochs=%d loss=%.6f', cfg.epochs, loss)
    head.trained = True
    return VosModel(clf, head)
