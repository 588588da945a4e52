import math
import typing

import numpy as np

from gyver.ualk.model.config import TrainConfig


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if cfg.schedule == 'cosine':
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


class Sgd:
    """SGD with heavy-ball momentum, updating parameter arrays in place.

    Weight decay applies to the parameters flagged in `decay`."""

    __slots__ = ('params', 'decay', 'momentum', 'weight_decay', '_velocity')

    def __init__(
        self,
        params: typing.Sequence[np.ndarray],
        decay: typing.Sequence[bool],
        momentum: float,
        weight_decay: float,
    ) -> None:
        self.params = list(params)
        self.decay = list(decay)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(param) for param in self.params]

    @classmethod
    def from_config(
        cls, params: typing.Sequence[np.ndarray], decay: typing.Sequence[bool], cfg: TrainConfig
    ) -> 'Sgd':
        return cls(params, decay, cfg.momentum, cfg.weight_decay)

    def step(self, grads: typing.Sequence[np.ndarray], lr: float) -> None:
        for param, grad, velocity, decay in zip(
            self.params, grads, self._velocity, self.decay
        ):
            if decay and self.weight_decay:
                grad = grad + self.weight_decay * param
            velocity *= self.momentum
            velocity += grad
            param -= lr * velocity
