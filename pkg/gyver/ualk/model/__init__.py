from .binary import BinaryHead, binary_loss, train_binary
from .config import TrainConfig
from .energy import (
    EnergyHead,
    energies,
    energy,
    energy_backward,
    logit_uncertainty_loss,
    uncertainty_loss,
)
from .mlp import (
    Mlp,
    MlpClassifier,
    per_sample_gradient,
    per_sample_gradients,
    predict,
    predict_batch,
)
from .persist import (
    load_binary,
    load_classifier,
    load_vos,
    save_binary,
    save_classifier,
    save_vos,
)
from .scoring import detect, ood_probabilities, ood_probability
from .training import cross_entropy, train_erm
from .vos import VosModel, energy_score, train_vos

__all__ = [
    'BinaryHead',
    'binary_loss',
    'train_binary',
    'TrainConfig',
    'EnergyHead',
    'energies',
    'energy',
    'energy_backward',
    'logit_uncertainty_loss',
    'uncertainty_loss',
    'Mlp',
    'MlpClassifier',
    'per_sample_gradient',
    'per_sample_gradients',
    'predict',
    'predict_batch',
    'load_binary',
    'load_classifier',
    'load_vos',
    'save_binary',
    'save_classifier',
    'save_vos',
    'detect',
    'ood_probabilities',
    'ood_probability',
    'cross_entropy',
    'train_erm',
    'VosModel',
    'energy_score',
    'train_vos',
]
