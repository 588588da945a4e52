import typing

from gyver.attrs import define, fields

from gyver.ualk.exceptions import ArgumentError

SCHEDULES = ('constant', 'cosine')


@define
class TrainConfig:
    """Mini-batch SGD settings shared by every trainer.

    `beta` weighs the auxiliary loss (uncertainty, vMF shaping or binary) against
    cross-entropy; `start_fraction` is the share of epochs run before it is
    switched on. `label_smoothing` mixes a uniform share into the ERM
    cross-entropy targets, which caps the confidence the classifier reaches
    on its training data."""

    lr: float = 0.05
    epochs: int = 60
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    beta: float = 0.1
    seed: int = 0
    schedule: str = 'constant'
    hidden_dims: tuple[int, ...] = (64, 64)
    start_fraction: float = 2 / 3
    label_smoothing: float = 0.0

    def __post_init__(self) -> None:
        for name in ('lr', 'epochs', 'batch_size'):
            if getattr(self, name) <= 0:
                raise ArgumentError(f'{name} must be positive, got {getattr(self, name)}')
        for name in ('momentum', 'weight_decay', 'beta'):
            if getattr(self, name) < 0:
                raise ArgumentError(f'{name} must be non-negative, got {getattr(self, name)}')
        if self.schedule not in SCHEDULES:
            raise ArgumentError(f'schedule must be one of {SCHEDULES}, got {self.schedule!r}')
        if not 0 <= self.start_fraction <= 1:
            raise ArgumentError(f'start_fraction must lie in [0, 1], got {self.start_fraction}')
        if not 0 <= self.label_smoothing < 1:
            raise ArgumentError(
                f'label_smoothing must lie in [0, 1), got {self.label_smoothing}'
            )
        dims = tuple(int(dim) for dim in self.hidden_dims)
        if any(dim < 1 for dim in dims):
            raise ArgumentError(f'hidden_dims must be positive, got {dims}')
        object.__setattr__(self, 'hidden_dims', dims)

    @property
    def start_epoch(self) -> int:
        return int(self.start_fraction * self.epochs)

    def replace(self, **changes: typing.Any) -> 'TrainConfig':
        values = {name: getattr(self, name) for name in fields(TrainConfig)}
        values.update(changes)
        return TrainConfig(**values)
