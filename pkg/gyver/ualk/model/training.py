import logging
import math
from collections.abc import Iterator

import numpy as np
from scipy.special import log_softmax, softmax

from gyver.ualk.datagen import LabeledSet
from gyver.ualk.exceptions import ArgumentError, TrainingError
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.model.mlp import Mlp, MlpClassifier
from gyver.ualk.model.optim import Sgd, learning_rate
from gyver.ualk.numerics import RngState

logger = logging.getLogger(__name__)


def cross_entropy(
    logits: np.ndarray, labels: np.ndarray, smoothing: float = 0.0
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient on the logits.

    With `smoothing` the target puts 1 - smoothing + smoothing/K on the label
    and smoothing/K on every other class."""
    n, k = logits.shape
    rows = np.arange(n)
    target = np.full((n, k), smoothing / k)
    target[rows, labels] += 1.0 - smoothing
    loss = -float(np.sum(target * log_softmax(logits, axis=1)) / n)
    grad = softmax(logits, axis=1) - target
    return loss, grad / n


def minibatches(n: int, batch_size: int, rng: RngState) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def check_finite(loss: float, epoch: int, *nets: Mlp) -> None:
    if not math.isfinite(loss) or not all(net.is_finite() for net in nets):
        raise TrainingError(f'training diverged at epoch {epoch} (loss {loss})', epoch)


def check_classes(data: LabeledSet) -> int:
    n_classes = data.n_classes
    if n_classes < 2:
        raise ArgumentError('classification needs at least two classes')
    counts = data.class_counts()
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ArgumentError(f'classes {missing} have no samples')
    return n_classes


def train_erm(data: LabeledSet, cfg: TrainConfig) -> MlpClassifier:
    """Fits a classifier by mini-batch SGD on softmax cross-entropy."""
    n_classes = check_classes(data)
    rng = RngState(cfg.seed).spawn('erm')
    clf = MlpClassifier.initialize(data.dim, cfg.hidden_dims, n_classes, rng.spawn('init'))
    optimizer = Sgd.from_config(clf.net.parameters(), clf.net.decay_mask(), cfg)
    shuffle = rng.spawn('shuffle')
    loss = math.nan
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total = 0.0
        for batch in minibatches(len(data), cfg.batch_size, shuffle):
            logits, acts = clf.net.forward(data.points[batch])
            batch_loss, grad = cross_entropy(
                logits, data.labels[batch], cfg.label_smoothing
            )
            grads, _ = clf.net.backward(acts, grad)
            optimizer.step(grads, lr)
            total += batch_loss * batch.size
        loss = total / len(data)
        check_finite(loss, epoch, clf.net)
        logger.debug('erm epoch=%d loss=%.6f lr=%.4g', epoch, loss, lr)
    logger.info('erm finished epochs=%d loss=%.6f', cfg.epochs, loss)
    return clf
