import typing

import numpy as np

from gyver.ualk.model.binary import BinaryHead
from gyver.ualk.model.energy import EnergyHead
from gyver.ualk.model.mlp import MlpClassifier
from gyver.ualk.model.vos import VosModel
from gyver.ualk.numerics import as_vector

Detector = typing.Union[BinaryHead, VosModel, tuple[MlpClassifier, EnergyHead]]


def ood_probabilities(head: Detector, x: np.ndarray) -> np.ndarray:
    """Row-wise probability of being in-distribution (or truthful).

    σ(−φ(E(x))) for a VOS model, σ(g_θ(x)) for a binary head."""
    if isinstance(head, tuple):
        head = VosModel(*head)
    if isinstance(head, VosModel):
        return head.id_probability(x)
    return head.probability(x)


def ood_probability(head: Detector, x: np.ndarray) -> float:
    return float(ood_probabilities(head, as_vector(x, name='x'))[0])


def detect(probabilities: np.ndarray, gamma: float = 0.5) -> np.ndarray:
    """G = 1{probability ≥ gamma}; True means accepted as in-distribution."""
    return np.asarray(probabilities) >= gamma
