"""
Gaussian distribution heads.

Each head is two hidden softplus layers followed by one linear layer for the
mean and one for the log-variance. The log-variance is clamped to
[LOG_VAR_MIN, LOG_VAR_MAX]; gradients do not flow through a clamped entry.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from app.model.distributions import GaussianParams, LOG_VAR_MIN, LOG_VAR_MAX
from app.nn.dense import DenseNet, GradientTape


@dataclass
class HeadNode:
    """Tape handles of one recorded head application."""

    trunk: int
    mean: int
    log_variance: int
    inside_clamp: np.ndarray


class GaussianHead:
    """
    Maps an input vector to a diagonal Gaussian over ``output_dim`` variables.

    Args:
        input_dim (int): Width of the (concatenated) input.
        output_dim (int): Dimension of the emitted Gaussian.
        hidden_dim (int): Width of both hidden layers.
        rng (np.random.Generator): Generator used for weight initialisation.
    """

    def __init__(self, input_dim: int, output_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.trunk = DenseNet.build([input_dim, hidden_dim, hidden_dim], ['softplus', 'softplus'], rng)
        self.mean = DenseNet.build([hidden_dim, output_dim], ['identity'], rng)
        self.log_variance = DenseNet.build([hidden_dim, output_dim], ['identity'], rng)

    @property
    def input_dim(self) -> int:
        return self.trunk.input_dim

    @property
    def output_dim(self) -> int:
        return self.mean.output_dim

    def nets(self) -> Dict[str, DenseNet]:
        return {"trunk": self.trunk, "mean": self.mean, "log_variance": self.log_variance}

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            f"{net_name}.{name}": array
            for net_name, net in self.nets().items()
            for name, array in net.parameters().items()
        }

    def __call__(self, inputs) -> GaussianParams:
        hidden = self.trunk(inputs)
        return GaussianParams(self.mean(hidden), self.log_variance(hidden))

    def record(self, tape: GradientTape, inputs) -> Tuple[GaussianParams, HeadNode]:
        hidden, trunk_id = tape.record(self.trunk, inputs)
        mean, mean_id = tape.record(self.mean, hidden)
        raw_log_var, log_var_id = tape.record(self.log_variance, hidden)
        inside = (raw_log_var >= LOG_VAR_MIN) & (raw_log_var <= LOG_VAR_MAX)
        return GaussianParams(mean, raw_log_var), HeadNode(trunk_id, mean_id, log_var_id, inside)

    def pullback(self, tape: GradientTape, node: HeadNode, grad_mean, grad_log_variance) -> np.ndarray:
        """Propagate gradients on (mean, clamped log-variance) back to the head input."""
        g_hidden = tape.pullback(node.mean, grad_mean)
        g_hidden = g_hidden + tape.pullback(node.log_variance, grad_log_variance * node.inside_clamp)
        return tape.pullback(node.trunk, g_hidden)

    def gradients(self, tape: GradientTape) -> Dict[str, np.ndarray]:
        return {
            f"{net_name}.{name}": array
            for net_name, net in self.nets().items()
            for name, array in tape.gradients(net).items()
        }
