import typing

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

from gyver.ualk.exceptions import ArgumentError
from gyver.ualk.model.mlp import Mlp
from gyver.ualk.numerics import RngState, as_matrix, as_vector
from gyver.ualk.shortcuts import numeric

PHI_HIDDEN = (16, 16)


class EnergyHead:
    """Learnable class weights w = exp(log_weights) and the scalar map φ.

    E(logits) = −log Σ_k w_k·exp(logit_k). φ: 1 → 16 → 16 → 1 turns an energy
    into the uncertainty logit; the ID probability is σ(−φ(E))."""

    __slots__ = ('log_weights', 'phi', 'trained')

    def __init__(self, log_weights: np.ndarray, phi: Mlp, trained: bool = False) -> None:
        log_weights = as_vector(log_weights, name='log_weights')
        if phi.dims[0] != 1 or phi.dims[-1] != 1:
            raise ArgumentError(f'phi must map scalars to scalars, got dims {phi.dims}')
        self.log_weights = log_weights
        self.phi = phi
        self.trained = trained

    @classmethod
    def initialize(
        cls, n_classes: int, rng: RngState, hidden: typing.Sequence[int] = PHI_HIDDEN
    ) -> 'EnergyHead':
        return cls(np.zeros(n_classes), Mlp.initialize([1, *hidden, 1], rng))

    @property
    def n_classes(self) -> int:
        return self.log_weights.size

    @property
    def class_weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def parameters(self) -> list[np.ndarray]:
        return [self.log_weights, *self.phi.parameters()]

    def decay_mask(self) -> list[bool]:
        return [False, *self.phi.decay_mask()]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.log_weights))) and self.phi.is_finite()

    def copy(self) -> 'EnergyHead':
        return EnergyHead(self.log_weights.copy(), self.phi.copy(), self.trained)

    def uncertainty_logit(self, energies: np.ndarray) -> np.ndarray:
        return self.phi(np.asarray(energies, dtype=np.float64).reshape(-1, 1))[:, 0]


def _check_logits(logits: np.ndarray, head: EnergyHead) -> np.ndarray:
    logits = as_matrix(logits, name='logits')
    if logits.shape[1] != head.n_classes:
        raise ArgumentError(
            f'logits have {logits.shape[1]} classes, energy head has {head.n_classes}'
        )
    return logits


def energies(logits: np.ndarray, head: EnergyHead) -> np.ndarray:
    return -logsumexp(_check_logits(logits, head) + head.log_weights, axis=1)


def energy(logits: np.ndarray, head: EnergyHead) -> float:
    """Weighted free energy −log Σ_k w_k·exp(logit_k) of one logit vector."""
    return float(energies(as_vector(logits, name='logits'), head)[0])


def energy_backward(logits: np.ndarray, head: EnergyHead) -> np.ndarray:
    """dE/dlogits per row, which is also dE/dlog_weights: −softmax(logits + u)."""
    return -softmax(_check_logits(logits, head) + head.log_weights, axis=1)


@numeric
class UncertaintyGradients:
    """Gradients of the uncertainty loss; `phi` follows `Mlp.parameters()`."""

    phi: list[np.ndarray]
    id_energies: np.ndarray
    outlier_energies: np.ndarray


@numeric
class LogitUncertaintyGradients:
    phi: list[np.ndarray]
    log_weights: np.ndarray
    id_logits: np.ndarray
    outlier_logits: np.ndarray


def uncertainty_loss(
    id_energies: typing.Sequence[float],
    outlier_energies: typing.Sequence[float],
    head: EnergyHead,
) -> tuple[float, UncertaintyGradients]:
    """Binary sigmoid loss separating ID energies from outlier energies.

    mean over outliers of −log σ(φ(E)) plus mean over ID of −log σ(−φ(E)),
    so training drives φ(E) negative on ID data."""
    ids = as_vector(id_energies, name='id_energies')
    outs = as_vector(outlier_energies, name='outlier_energies')
    if not ids.size or not outs.size:
        raise ArgumentError('uncertainty loss needs ID and outlier energies')
    n_id = ids.size
    z, acts = head.phi.forward(np.concatenate((ids, outs)).reshape(-1, 1))
    z = z[:, 0]
    z_id, z_out = z[:n_id], z[n_id:]
    loss = float(np.mean(-log_expit(-z_id)) + np.mean(-log_expit(z_out)))
    dz = np.concatenate((expit(z_id) / n_id, -expit(-z_out) / outs.size))
    phi_grads, grad_energy = head.phi.backward(acts, dz.reshape(-1, 1))
    grad_energy = grad_energy[:, 0]
    return loss, UncertaintyGradients(phi_grads, grad_energy[:n_id], grad_energy[n_id:])


def logit_uncertainty_loss(
    id_logits: np.ndarray, outlier_logits: np.ndarray, head: EnergyHead
) -> tuple[float, LogitUncertaintyGradients]:
    """`uncertainty_loss` on energies computed from logits, with the chain
    carried through to the class weights and the logits."""
    id_logits = _check_logits(id_logits, head)
    outlier_logits = _check_logits(outlier_logits, head)
    loss, grads = uncertainty_loss(
        energies(id_logits, head), energies(outlier_logits, head), head
    )
    d_id = grads.id_energies[:, None] * energy_backward(id_logits, head)
    d_out = grads.outlier_energies[:, None] * energy_backward(outlier_logits, head)
    d_weights = d_id.sum(axis=0) + d_out.sum(axis=0)
    return loss, LogitUncertaintyGradients(grads.phi, d_weights, d_id, d_out)
