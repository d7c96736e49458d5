"""
Adam optimizer over named parameter dictionaries.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from app.exceptions import DimensionError, NumericalError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First/second moment estimates and hyperparameters of one Adam run."""

    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> 'OptimizerState':
        return OptimizerState(
            self.learning_rate, self.beta1, self.beta2, self.eps, self.step,
            {k: v.copy() for k, v in self.first_moment.items()},
            {k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(state: OptimizerState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One bias-corrected Adam update.

    Neither ``state`` nor ``params`` is modified; updated copies are returned.

    Args:
        state (OptimizerState): Current optimizer state.
        params (dict): Parameter arrays by name.
        grads (dict): Gradients by name; parameters without a gradient are left as is.

    Returns:
        tuple: ``(new_params, new_state)``.

    Raises:
        NumericalError: If any gradient contains NaN or inf.
    """
    for name, g in grads.items():
        if name not in params:
            raise DimensionError(f"gradient '{name}'", "a known parameter", "unknown name")
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient '{name}'", params[name].shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"Non-finite gradient for parameter '{name}'")

    new_state = state.copy()
    new_state.step = state.step + 1
    t = new_state.step
    new_params = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p.copy()
            continue
        m = new_state.first_moment.get(name, np.zeros_like(p))
        v = new_state.second_moment.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state.first_moment[name] = m
        new_state.second_moment[name] = v
    return new_params, new_state


class Adam:
    """
    Stateful wrapper that applies :func:`adam_step` in place.

    Args:
        learning_rate (float): Step size η.
        beta1, beta2, eps (float): Moment decay rates and denominator guard.
    """

    def __init__(self, learning_rate: float = 1e-6, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.state = OptimizerState(learning_rate, beta1, beta2, eps)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        subset = {name: params[name] for name in grads}
        new_params, self.state = adam_step(self.state, subset, grads)
        for name, value in new_params.items():
            params[name][...] = value
