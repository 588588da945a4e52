"""Flat JSON experiment configuration.

Every key maps to one `ExperimentConfig` field; `pipeline` and `seed` are
required, everything else falls back to the toy-scale defaults below."""

import os
import typing

from gyver.attrs import asdict, define, fields, fromdict

from gyver.ualk.exceptions import ArgumentError, ConfigError
from gyver.ualk.io.json import read_json, write_json
from gyver.ualk.model.config import TrainConfig
from gyver.ualk.subspace import HEAD_WEIGHT_DECAY, HaloConfig
from gyver.ualk.synthesis import SynthesisConfig
from gyver.ualk.utils.typedef import PathLike
from gyver.ualk.vmf import SirenConfig
from gyver.ualk.wildfilter import SalConfig

FORMAT_VERSION = 1
RESOLVED_NAME = 'config.resolved.json'
PIPELINES = ('gen', 'vos', 'siren', 'sal', 'halo', 'eval')
DATASETS = ('sal', 'vos', 'vmf', 'subspace')


@define
class ExperimentConfig:
    pipeline: str
    seed: int
    out: str = 'runs'

    # datasets
    dataset: str = 'sal'
    scenario: int = 1
    per_class: int = 1_000
    wild_per_class: int = 3_000
    test_per_class: int = 1_000
    n: int = 5_000
    dim: int = 32
    pi: float = 0.1
    shift: float = 5.0
    kappa: float = 100.0
    ring_radius: float = 8.0
    embeddings: str = ''
    flags: str = ''
    id_scores: str = ''
    ood_scores: str = ''

    # training
    lr: float = 0.05
    epochs: int = 60
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    beta: float = 0.1
    schedule: str = 'constant'
    hidden_width: int = 64
    hidden_layers: int = 2
    start_fraction: float = 2 / 3

    # outlier synthesis
    t: int = 1
    pool_size: int = 10_000
    n_outliers: int = 1
    queue_capacity: int = 1_000
    erm_baseline: bool = True

    # representation shaping
    projection_dim: int = 16
    siren_beta: float = 1.5
    kappa_init: float = 10.0
    alpha: float = 0.95
    fixed_kappa: bool = False
    knn_k: int = 50

    # wild filtering
    quantile: float = 0.95
    class_conditional: bool = True
    n_singular_vectors: int = 1
    erm_epochs: int = 20
    erm_label_smoothing: float = 0.5
    binary_epochs: int = 20
    binary_width: int = 64

    # subspace membership
    k: int = 1
    tune_k: bool = False
    max_k: int = 5
    validation_fraction: float = 0.2
    weighted: bool = True
    normalize: bool = False
    split_quantile: float = 0.85
    halo_epochs: int = 50

    # metrics
    tpr: float = 0.95

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ArgumentError(f'pipeline must be one of {PIPELINES}, got {self.pipeline!r}')
        if self.dataset not in DATASETS:
            raise ArgumentError(f'dataset must be one of {DATASETS}, got {self.dataset!r}')
        if self.seed < 0:
            raise ArgumentError(f'seed must be non-negative, got {self.seed}')
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ArgumentError('hidden_layers and hidden_width must be positive')
        if not 0 < self.validation_fraction < 1:
            raise ArgumentError(
                f'validation_fraction must lie in (0, 1), got {self.validation_fraction}'
            )

    def train_config(self, **changes: typing.Any) -> TrainConfig:
        values = {
            'lr': self.lr,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'momentum': self.momentum,
            'weight_decay': self.weight_decay,
            'beta': self.beta,
            'seed': self.seed,
            'schedule': self.schedule,
            'hidden_dims': (self.hidden_width,) * self.hidden_layers,
            'start_fraction': self.start_fraction,
        }
        values.update(changes)
        return TrainConfig(**values)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(
            t=self.t,
            pool_size=self.pool_size,
            n_outliers=self.n_outliers,
            knn_k=self.knn_k,
        )

    def siren_config(self) -> SirenConfig:
        return SirenConfig(
            projection_dim=self.projection_dim,
            beta=self.siren_beta,
            kappa_init=self.kappa_init,
            alpha=self.alpha,
            fixed_kappa=self.fixed_kappa,
        )

    def sal_config(self) -> SalConfig:
        return SalConfig(
            quantile=self.quantile,
            class_conditional=self.class_conditional,
            n_singular_vectors=self.n_singular_vectors,
            binary_width=self.binary_width,
            erm=self.train_config(
                epochs=self.erm_epochs, label_smoothing=self.erm_label_smoothing
            ),
            binary=self.train_config(epochs=self.binary_epochs, beta=1.0),
        )

    def halo_config(self, k: typing.Optional[int] = None) -> HaloConfig:
        return HaloConfig(
            k=k if k is not None else self.k,
            weighted=self.weighted,
            normalize=self.normalize,
            split_quantile=self.split_quantile,
            width=self.binary_width,
            train=self.train_config(
                epochs=self.halo_epochs,
                batch_size=512,
                weight_decay=HEAD_WEIGHT_DECAY,
                schedule='cosine',
                beta=1.0,
            ),
        )


REQUIRED = tuple(
    name for name, field in fields(ExperimentConfig).items()
    if not field.has_default and not field.has_default_factory
)


def _check_type(name: str, value: typing.Any, expected: type) -> None:
    if expected is bool:
        valid = isinstance(value, bool)
    elif expected is int:
        valid = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        valid = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        valid = isinstance(value, expected)
    if not valid:
        raise ConfigError(
            f'key {name!r} expects {expected.__name__}, got {type(value).__name__}', name
        )


def resolve_config(
    raw: typing.Mapping[str, typing.Any],
    overrides: typing.Optional[typing.Mapping[str, typing.Any]] = None,
) -> ExperimentConfig:
    """Validates a raw key/value mapping and fills in defaults; `overrides`
    (command-line values) win over `raw`."""
    known = fields(ExperimentConfig)
    merged = dict(raw)
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    for key in merged:
        if key not in known:
            raise ConfigError(f'unknown key {key!r}', key)
    for key in REQUIRED:
        if key not in merged:
            raise ConfigError(f'missing required key {key!r}', key)
    for key, value in merged.items():
        _check_type(key, value, known[key].declared_type)
    values = {
        name: field.default for name, field in known.items() if field.has_default
    }
    values.update(merged)
    try:
        return fromdict(ExperimentConfig, values)
    except ArgumentError as exc:
        raise ConfigError(exc.msg) from exc


def load_config(
    path: PathLike,
    overrides: typing.Optional[typing.Mapping[str, typing.Any]] = None,
) -> ExperimentConfig:
    return resolve_config(read_json(path), overrides)


def write_resolved(cfg: ExperimentConfig, directory: PathLike) -> str:
    """Writes the resolved configuration plus `format_version` next to the
    run's outputs and returns its path."""
    path = os.path.join(directory, RESOLVED_NAME)
    write_json(path, {**asdict(cfg), 'format_version': FORMAT_VERSION})
    return path
