import typing

import numpy as np
from scipy.special import softmax

from gyver.ualk.exceptions import ArgumentError
from gyver.ualk.numerics import RngState, as_matrix, as_vector
from gyver.ualk.utils import ordered_map


class Mlp:
    """Fully connected network, rectifier on hidden layers, linear output.

    Layer `l` maps rows by ``a @ weights[l] + biases[l]``; `weights[l]` is
    (fan_in, fan_out)."""

    __slots__ = ('weights', 'biases')

    def __init__(
        self, weights: typing.Sequence[np.ndarray], biases: typing.Sequence[np.ndarray]
    ) -> None:
        if not weights or len(weights) != len(biases):
            raise ArgumentError('an Mlp needs one bias per weight matrix')
        for index, (weight, bias) in enumerate(zip(weights, biases)):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise ArgumentError(f'layer {index} has inconsistent shapes')
            if index and weights[index - 1].shape[1] != weight.shape[0]:
                raise ArgumentError(
                    f'layer {index} expects {weight.shape[0]} inputs,'
                    f' previous layer yields {weights[index - 1].shape[1]}'
                )
        self.weights = [np.array(weight, dtype=np.float64) for weight in weights]
        self.biases = [np.array(bias, dtype=np.float64) for bias in biases]

    @classmethod
    def initialize(cls, dims: typing.Sequence[int], rng: RngState) -> 'Mlp':
        """Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases."""
        if len(dims) < 2 or any(dim < 1 for dim in dims):
            raise ArgumentError(f'invalid layer dims {list(dims)}')
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(limit * (2.0 * rng.uniform((fan_in, fan_out)) - 1.0))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [weight.shape[1] for weight in self.weights]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for weight, bias in zip(self.weights, self.biases):
            params += [weight, bias]
        return params

    def decay_mask(self) -> list[bool]:
        return [True, False] * self.depth

    def copy(self) -> 'Mlp':
        return Mlp(self.weights, self.biases)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(param)) for param in self.parameters())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the output and the input of every layer, for `backward`."""
        acts = [x]
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ weight + bias
            if layer == self.depth - 1:
                return z, acts
            acts.append(np.maximum(z, 0.0))
        raise AssertionError('unreachable')

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(
        self,
        acts: typing.Sequence[np.ndarray],
        grad_out: np.ndarray,
        grad_penultimate: typing.Optional[np.ndarray] = None,
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagates `grad_out` (d loss / d output).

        `grad_penultimate` is an extra gradient on the last layer's input, for
        losses that read the features directly. Returns parameter gradients in
        `parameters()` order and the gradient on the network input."""
        grads: list[np.ndarray] = [np.empty(0)] * (2 * self.depth)
        grad = grad_out
        for layer in reversed(range(self.depth)):
            inputs = acts[layer]
            grads[2 * layer] = inputs.T @ grad
            grads[2 * layer + 1] = grad.sum(axis=0)
            grad = grad @ self.weights[layer].T
            if layer == self.depth - 1 and grad_penultimate is not None:
                grad = grad + grad_penultimate
            if layer:
                grad = grad * (inputs > 0)
        return grads, grad


class MlpClassifier:
    """K-way classifier h_w; the last linear layer reads the penultimate
    features."""

    __slots__ = ('net',)

    def __init__(self, net: Mlp) -> None:
        if net.depth < 2:
            raise ArgumentError('a classifier needs at least one hidden layer')
        self.net = net

    @classmethod
    def initialize(
        cls, input_dim: int, hidden_dims: typing.Sequence[int], n_classes: int, rng: RngState
    ) -> 'MlpClassifier':
        return cls(Mlp.initialize([input_dim, *hidden_dims, n_classes], rng))

    @property
    def input_dim(self) -> int:
        return self.net.dims[0]

    @property
    def feature_dim(self) -> int:
        return self.net.dims[-2]

    @property
    def n_classes(self) -> int:
        return self.net.dims[-1]

    @property
    def head_weight(self) -> np.ndarray:
        return self.net.weights[-1]

    @property
    def head_bias(self) -> np.ndarray:
        return self.net.biases[-1]

    def copy(self) -> 'MlpClassifier':
        return MlpClassifier(self.net.copy())

    def _check_inputs(self, x: np.ndarray) -> np.ndarray:
        x = as_matrix(x, name='inputs')
        if x.shape[1] != self.input_dim:
            raise ArgumentError(
                f'inputs have {x.shape[1]} columns, classifier expects {self.input_dim}'
            )
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.net(self._check_inputs(x))

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(self._check_inputs(x))[1][-1]

    def head_logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.head_weight + self.head_bias


def predict(clf: MlpClassifier, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Logits and argmax label of one input; ties go to the lowest index."""
    x = as_vector(x, name='x')
    logits = clf.logits(x)[0]
    return logits, int(np.argmax(logits))


def predict_batch(clf: MlpClassifier, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    logits = clf.logits(x)
    return logits, np.argmax(logits, axis=1)


def _gradient_rows(
    features: np.ndarray, logits: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    residual = softmax(logits, axis=1)
    residual[np.arange(labels.size), labels] -= 1.0
    extended = np.hstack((features, np.ones((features.shape[0], 1))))
    return (extended[:, :, None] * residual[:, None, :]).reshape(features.shape[0], -1)


def per_sample_gradient(clf: MlpClassifier, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of the cross-entropy of (x, y) with respect to the final layer.

    Laid out as the (feature_dim + 1)×K matrix [h; 1] ⊗ (softmax − onehot(y)),
    weights first and the bias row last, flattened row-major."""
    if not 0 <= y < clf.n_classes:
        raise ArgumentError(f'label {y} outside [0, {clf.n_classes})')
    x = as_vector(x, name='x')
    logits, acts = clf.net.forward(clf._check_inputs(x))
    return _gradient_rows(acts[-1], logits, np.array([y]))[0]


def per_sample_gradients(
    clf: MlpClassifier, x: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Row-wise `per_sample_gradient`, computed data-parallel in row chunks."""
    x = clf._check_inputs(x)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ArgumentError(f'{labels.size} labels given for {x.shape[0]} inputs')
    if labels.size and (labels.min() < 0 or labels.max() >= clf.n_classes):
        raise ArgumentError(f'labels must lie in [0, {clf.n_classes})')

    def rows(lo: int, hi: int) -> np.ndarray:
        logits, acts = clf.net.forward(x[lo:hi])
        return _gradient_rows(acts[-1], logits, labels[lo:hi])

    parts = ordered_map(rows, x.shape[0])
    if not parts:
        return np.empty((0, (clf.feature_dim + 1) * clf.n_classes))
    return np.concatenate(parts, axis=0)
