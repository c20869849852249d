"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from voice2face.errors import NotFiniteError, ShapeError
from voice2face.tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter Adam state; moment arrays start at zero."""

    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One descent step on `grads`; updates `params` and `state` in place.

    Callers wanting gradient ascent negate the gradient before calling.
    """
    if params.shape != grads.shape:
        raise ShapeError("adam_step", "grads", params.shape, grads.shape)
    if not np.isfinite(grads.sum()) and not np.isfinite(grads).all():
        raise NotFiniteError("adam_step: non-finite gradient")
    if state.first_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * grads
    v *= b2
    v += (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** state.step_count)
    v_hat = v / (1.0 - b2 ** state.step_count)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


class Adam:
    """Adam over a list of parameter Tensors, one AdamState each."""

    def __init__(self, params, learning_rate=2e-4, beta1=0.5, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.states = [
            AdamState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)
            for _ in self.params
        ]

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, s)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def set_requires_grad(params, flag: bool):
    for p in params:
        if isinstance(p, Tensor):
            p.requires_grad = flag
