from .config import ExperimentConfig, load_config, resolve_config
from .pipelines import run

__all__ = ['ExperimentConfig', 'load_config', 'resolve_config', 'run']
