"""
Dense feedforward networks with a minimal reverse-mode gradient tape.

Every distribution head of the correction model is built from these chains of
affine maps and element-wise activations. All arithmetic is float64.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import DimensionError, NumericalError, DataError

logger = logging.getLogger(__name__)

ACTIVATIONS = ('relu', 'softplus', 'identity')


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == 'identity':
        return a
    if name == 'relu':
        return np.maximum(a, 0.0)
    # softplus(a) = log(1 + e^a), written to avoid overflow for large a
    return np.logaddexp(0.0, a)


def _activation_derivative(name: str, a: np.ndarray) -> np.ndarray:
    if name == 'identity':
        return np.ones_like(a)
    if name == 'relu':
        return (a > 0.0).astype(np.float64)
    # d softplus / da = sigmoid(a)
    return np.exp(-np.logaddexp(0.0, -a))


@dataclass
class DenseLayer:
    """One affine map ``W @ x + b`` followed by an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = 'identity'

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2:
            raise DataError(f"Layer weight must be a matrix, got shape {self.weight.shape}")
        if self.bias.shape[0] != self.weight.shape[0]:
            raise DimensionError("layer bias", self.weight.shape[0], self.bias.shape[0])
        if self.activation not in ACTIVATIONS:
            raise DataError(f"Unknown activation '{self.activation}'", {"allowed": ACTIVATIONS})
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NumericalError("Layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class DenseNet:
    """
    An ordered chain of dense layers.

    Inputs may be a single vector of length ``input_dim`` or a batch of shape
    ``(n, input_dim)``; outputs keep the same leading shape.

    Args:
        layers (Sequence[DenseLayer]): Layers in application order.
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise DataError("A DenseNet needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise DimensionError(f"layer {k + 1} input", layers[k].out_dim, layers[k + 1].in_dim)
        self.layers: List[DenseLayer] = list(layers)

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> 'DenseNet':
        """
        Create a network with Glorot-uniform weights and zero biases.

        Args:
            sizes (Sequence[int]): Layer widths, input first, e.g. ``[20, 32, 32]``.
            activations (Sequence[str]): One activation per layer (``len(sizes) - 1``).
            rng (np.random.Generator): Seeded generator used for the weights.

        Returns:
            DenseNet: The initialised network.
        """
        if len(activations) != len(sizes) - 1:
            raise DimensionError("activation list", len(sizes) - 1, len(activations))
        layers = []
        for fan_in, fan_out, activation in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(DenseLayer(weight, np.zeros(fan_out), activation))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def _as_batch(self, x) -> Tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x.reshape(1, -1) if single else x
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise DimensionError("network input", self.input_dim, batch.shape[-1] if batch.ndim else 0)
        return batch, single

    def forward(self, x) -> np.ndarray:
        """
        Apply the network.

        Args:
            x: Input vector ``(input_dim,)`` or batch ``(n, input_dim)``.

        Returns:
            np.ndarray: Output vector or batch.
        """
        h, single = self._as_batch(x)
        for layer in self.layers:
            h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
        return h[0] if single else h

    __call__ = forward

    def parameters(self) -> Dict[str, np.ndarray]:
        """Named parameter arrays (live references, not copies)."""
        params = {}
        for k, layer in enumerate(self.layers):
            params[f"{k}.weight"] = layer.weight
            params[f"{k}.bias"] = layer.bias
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())


@dataclass
class _TapeEntry:
    net: DenseNet
    single: bool
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]


@dataclass
class GradientTape:
    """
    Records dense-net applications so gradients can be pulled back through them.

    Each ``record`` call runs a forward pass and keeps the layer inputs and
    pre-activations. ``pullback`` propagates an output gradient through one
    recorded application, accumulating parameter gradients per network, and
    returns the gradient with respect to that application's input.
    """

    entries: List[_TapeEntry] = field(default_factory=list)
    _grads: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    def record(self, net: DenseNet, x) -> Tuple[np.ndarray, int]:
        h, single = net._as_batch(x)
        inputs, pre = [], []
        for layer in net.layers:
            a = h @ layer.weight.T + layer.bias
            inputs.append(h)
            pre.append(a)
            h = _activate(layer.activation, a)
        self.entries.append(_TapeEntry(net, single, inputs, pre))
        return (h[0] if single else h), len(self.entries) - 1

    def pullback(self, index: int, grad_output) -> np.ndarray:
        entry = self.entries[index]
        g = np.asarray(grad_output, dtype=np.float64)
        if entry.single:
            g = g.reshape(1, -1)
        grads = self._grads.setdefault(id(entry.net), {
            name: np.zeros_like(p) for name, p in entry.net.parameters().items()
        })
        for k in reversed(range(len(entry.net.layers))):
            layer = entry.net.layers[k]
            g = g * _activation_derivative(layer.activation, entry.pre_activations[k])
            grads[f"{k}.weight"] += g.T @ entry.inputs[k]
            grads[f"{k}.bias"] += g.sum(axis=0)
            g = g @ layer.weight
        return g[0] if entry.single else g

    def gradients(self, net: DenseNet) -> Dict[str, np.ndarray]:
        """Accumulated gradients for ``net``; zeros if it was never pulled back through."""
        if id(net) in self._grads:
            return self._grads[id(net)]
        return {name: np.zeros_like(p) for name, p in net.parameters().items()}


def grad(net: DenseNet, loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]], x) -> Dict[str, np.ndarray]:
    """
    Gradient of a scalar loss of the network output with respect to every parameter.

    Args:
        net (DenseNet): Network to differentiate.
        loss_fn (Callable): Maps the network output to ``(loss, dloss/doutput)``.
        x: Network input.

    Returns:
        dict: Parameter name to gradient array, shaped like the parameters.

    Raises:
        NumericalError: If the loss is not finite.
    """
    tape = GradientTape()
    out, node = tape.record(net, x)
    value, grad_out = loss_fn(out)
    if not np.isfinite(value):
        raise NumericalError(f"Loss is not finite: {value}")
    tape.pullback(node, grad_out)
    return tape.gradients(net)
