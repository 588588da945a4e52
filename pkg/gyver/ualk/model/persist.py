import os
import typing

import numpy as np

from gyver.ualk.exceptions import FormatError
from gyver.ualk.io.container import read_sections, write_sections
from gyver.ualk.model.binary import BinaryHead
from gyver.ualk.model.energy import EnergyHead
from gyver.ualk.model.mlp import Mlp, MlpClassifier
from gyver.ualk.model.vos import VosModel
from gyver.ualk.utils.typedef import PathLike


def mlp_sections(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    sections = {}
    for layer, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        sections[f'{prefix}.W{layer}'] = weight
        sections[f'{prefix}.b{layer}'] = bias.reshape(1, -1)
    return sections


def mlp_from_sections(prefix: str, sections: typing.Mapping[str, np.ndarray]) -> Mlp:
    weights, biases = [], []
    while f'{prefix}.W{len(weights)}' in sections:
        layer = len(weights)
        bias_key = f'{prefix}.b{layer}'
        if bias_key not in sections:
            raise FormatError(f'missing section {bias_key!r}')
        weights.append(sections[f'{prefix}.W{layer}'])
        biases.append(sections[bias_key].reshape(-1))
    if not weights:
        raise FormatError(f'no layers found under {prefix!r}')
    return Mlp(weights, biases)


def save_classifier(path: PathLike, clf: MlpClassifier) -> None:
    write_sections(path, mlp_sections('classifier', clf.net))


def load_classifier(path: PathLike) -> MlpClassifier:
    return MlpClassifier(mlp_from_sections('classifier', read_sections(path)))


def save_vos(path: PathLike, model: VosModel) -> None:
    sections = mlp_sections('classifier', model.classifier.net)
    sections['energy.log_weights'] = model.head.log_weights.reshape(1, -1)
    sections.update(mlp_sections('energy.phi', model.head.phi))
    write_sections(path, sections)


def load_vos(path: PathLike) -> VosModel:
    sections = read_sections(path)
    if 'energy.log_weights' not in sections:
        raise FormatError("missing section 'energy.log_weights'", os.fspath(path))
    head = EnergyHead(
        sections['energy.log_weights'].reshape(-1),
        mlp_from_sections('energy.phi', sections),
        trained=True,
    )
    return VosModel(MlpClassifier(mlp_from_sections('classifier', sections)), head)


def save_binary(path: PathLike, head: BinaryHead) -> None:
    sections = mlp_sections('binary', head.net)
    if head.backbone is not None:
        sections.update(mlp_sections('backbone', head.backbone.net))
    write_sections(path, sections)


def load_binary(path: PathLike) -> BinaryHead:
    sections = read_sections(path)
    backbone = None
    if 'backbone.W0' in sections:
        backbone = MlpClassifier(mlp_from_sections('backbone', sections))
    return BinaryHead(mlp_from_sections('binary', sections), backbone, trained=True)
