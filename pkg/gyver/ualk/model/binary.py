import logging
import math
import typing

import numpy as np
from scipy.special import expit, log_expit

from gyver.ualk.exceptions import ArgumentError, StateError
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.model.mlp import Mlp, MlpClassifier
from gyver.ualk.model.optim import Sgd, learning_rate
from gyver.ualk.model.training import check_finite, cross_entropy
from gyver.ualk.numerics import RngState, as_labels, as_matrix

logger = logging.getLogger(__name__)

BINARY_WIDTH = 64


class BinaryHead:
    """Scalar-output classifier g_θ; positives (ID, truthful) score above 0.

    When `backbone` is set, g_θ reads the backbone's penultimate features
    instead of raw inputs."""

    __slots__ = ('net', 'backbone', 'trained')

    def __init__(
        self,
        net: Mlp,
        backbone: typing.Optional[MlpClassifier] = None,
        trained: bool = False,
    ) -> None:
        if net.dims[-1] != 1:
            raise ArgumentError(f'binary head must have one output, got {net.dims[-1]}')
        if backbone is not None and backbone.feature_dim != net.dims[0]:
            raise ArgumentError('binary head input does not match backbone features')
        self.net = net
        self.backbone = backbone
        self.trained = trained

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        rng: RngState,
        width: int = BINARY_WIDTH,
        backbone: typing.Optional[MlpClassifier] = None,
    ) -> 'BinaryHead':
        in_dim = backbone.feature_dim if backbone is not None else input_dim
        return cls(Mlp.initialize([in_dim, width, 1], rng), backbone)

    @property
    def input_dim(self) -> int:
        return self.backbone.input_dim if self.backbone is not None else self.net.dims[0]

    def _require_trained(self) -> None:
        if not self.trained:
            raise StateError('binary head has not been trained')

    def logit(self, x: np.ndarray) -> np.ndarray:
        self._require_trained()
        x = as_matrix(x, name='inputs')
        if x.shape[1] != self.input_dim:
            raise ArgumentError(
                f'inputs have {x.shape[1]} columns, head expects {self.input_dim}'
            )
        inputs = self.backbone.features(x) if self.backbone is not None else x
        return self.net(inputs)[:, 0]

    def probability(self, x: np.ndarray) -> np.ndarray:
        """S(x) = σ(g_θ(x))."""
        return expit(self.logit(x))

    def detect(self, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        """G(x) = 1{S(x) ≥ threshold}; True marks positives."""
        return self.probability(x) >= threshold


def binary_loss(
    positive_logits: np.ndarray, negative_logits: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """mean −log σ(g) over positives plus mean −log σ(−g) over negatives, with
    the gradients on both logit vectors."""
    n_pos, n_neg = positive_logits.size, negative_logits.size
    loss = float(np.mean(-log_expit(positive_logits)) + np.mean(-log_expit(-negative_logits)))
    return loss, -expit(-positive_logits) / n_pos, expit(negative_logits) / n_neg


def _split_batches(n: int, n_batches: int, rng: RngState) -> list[np.ndarray]:
    order = rng.permutation(n)
    if n < n_batches:
        # the smaller side is cycled so every batch sees both classes
        order = np.resize(order, n_batches)
    return np.array_split(order, n_batches)


def train_binary(
    positives: np.ndarray,
    negatives: np.ndarray,
    cfg: TrainConfig,
    *,
    width: int = BINARY_WIDTH,
    backbone: typing.Optional[MlpClassifier] = None,
    positive_labels: typing.Optional[typing.Sequence[int]] = None,
) -> BinaryHead:
    """Fits g_θ so positives score > 0 and negatives < 0.

    With a `backbone`, g_θ reads its features and is trained jointly with it;
    if `positive_labels` are given too, the backbone keeps its cross-entropy
    on the positives and the binary loss enters with weight `cfg.beta`. The
    caller's backbone is left untouched; the head owns a tuned copy."""
    positives = as_matrix(positives, name='positives')
    negatives = as_matrix(negatives, name='negatives')
    if not positives.shape[0] or not negatives.shape[0]:
        raise ArgumentError('binary training needs positives and negatives')
    if positives.shape[1] != negatives.shape[1]:
        raise ArgumentError('positives and negatives differ in dimension')
    labels = None
    if positive_labels is not None:
        if backbone is None:
            raise ArgumentError('positive_labels require a backbone')
        labels = as_labels(positive_labels, backbone.n_classes)
        if labels.size != positives.shape[0]:
            raise ArgumentError('one label per positive is required')
    rng = RngState(cfg.seed).spawn('binary')
    backbone = backbone.copy() if backbone is not None else None
    head = BinaryHead.initialize(positives.shape[1], rng.spawn('init'), width, backbone)
    params, decay = head.net.parameters(), head.net.decay_mask()
    if backbone is not None:
        params += backbone.net.parameters()
        decay += backbone.net.decay_mask()
    optimizer = Sgd.from_config(params, decay, cfg)
    weight = cfg.beta if labels is not None else 1.0
    n_pos, n_neg = positives.shape[0], negatives.shape[0]
    n_batches = max(1, math.ceil(max(n_pos, n_neg) / cfg.batch_size))
    shuffle = rng.spawn('shuffle')
    loss = math.nan
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        total = 0.0
        pos_batches = _split_batches(n_pos, n_batches, shuffle)
        neg_batches = _split_batches(n_neg, n_batches, shuffle)
        for pos, neg in zip(pos_batches, neg_batches):
            x = np.vstack((positives[pos], negatives[neg]))
            if backbone is None:
                g, acts = head.net.forward(x)
                step_loss, d_pos, d_neg = binary_loss(g[: pos.size, 0], g[pos.size :, 0])
                grads, _ = head.net.backward(acts, np.concatenate((d_pos, d_neg))[:, None])
            else:
                logits, backbone_acts = backbone.net.forward(x)
                g, acts = head.net.forward(backbone_acts[-1])
                step_loss, d_pos, d_neg = binary_loss(g[: pos.size, 0], g[pos.size :, 0])
                step_loss *= weight
                d_g = weight * np.concatenate((d_pos, d_neg))[:, None]
                grads, d_features = head.net.backward(acts, d_g)
                d_logits = np.zeros_like(logits)
                if labels is not None:
                    ce, d_ce = cross_entropy(logits[: pos.size], labels[pos])
                    step_loss += ce
                    d_logits[: pos.size] = d_ce
                backbone_grads, _ = backbone.net.backward(
                    backbone_acts, d_logits, grad_penultimate=d_features
                )
                grads += backbone_grads
            optimizer.step(grads, lr)
            total += step_loss
        loss = total / n_batches
        nets = (head.net,) if backbone is None else (head.net, backbone.net)
        check_finite(loss, epoch, *nets)
        logger.debug('binary epoch=%d loss=%.6f', epoch, loss)
    logger.info(
        'binary head trained positives=%d negatives=%d loss=%.6f', n_pos, n_neg, loss
    )
    head.trained = True
    return head
