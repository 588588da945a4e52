from .datagen import LabeledSet, WildSet, make_subspace_mixture, make_wild
from .exceptions import (
    ArgumentError,
    ConfigError,
    ConvergenceError,
    EmptyCandidateError,
    FormatError,
    StateError,
    UalkError,
)
from .metrics import ScoreSets, auroc, fpr_at_tpr
from .model import MlpClassifier, TrainConfig, train_binary, train_erm, train_vos
from .subspace import HaloConfig, SubspaceModel, fit_subspace, membership_scores, train_halo
from .synthesis import ClassGaussians, SynthesisConfig, sample_virtual_outliers
from .vmf import SirenConfig, VmfMixture, train_siren, vmf_score
from .wildfilter import FilterResult, SalConfig, train_sal

__all__ = [
    'LabeledSet',
    'WildSet',
    'make_subspace_mixture',
    'make_wild',
    'ArgumentError',
    'ConfigError',
    'ConvergenceError',
    'EmptyCandidateError',
    'FormatError',
    'StateError',
    'UalkError',
    'ScoreSets',
    'auroc',
    'fpr_at_tpr',
    'MlpClassifier',
    'TrainConfig',
    'train_binary',
    'train_erm',
    'train_vos',
    'HaloConfig',
    'SubspaceModel',
    'fit_subspace',
    'membership_scores',
    'train_halo',
    'ClassGaussians',
    'SynthesisConfig',
    'sample_virtual_outliers',
    'SirenConfig',
    'VmfMixture',
    'train_siren',
    'vmf_score',
    'FilterResult',
    'SalConfig',
    'train_sal',
]

__version__ = '0.1.0'
__version_info__ = tuple(map(int, __version__.split('.')))
