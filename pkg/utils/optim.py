"""
Adam optimizer over tensor-core parameters.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from utils.tensor import ShapeError, Tensor


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            step=0,
            first_moments=[np.zeros(p.shape, dtype=np.float64) for p in params],
            second_moments=[np.zeros(p.shape, dtype=np.float64) for p in params],
        )


def optimizer_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
                   state: AdamState, config: AdamConfig) -> Sequence[Tensor]:
    """
    Apply one bias-corrected Adam update in place.

    A missing gradient (None) leaves its parameter and moments untouched.
    """
    if not (len(params) == len(grads) == len(state.first_moments) == len(state.second_moments)):
        raise ShapeError(
            f"Optimizer expects one (param, grad, state) triple per tensor, got "
            f"{len(params)} params, {len(grads)} grads, {len(state.first_moments)} moment slots"
        )

    state.step += 1
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step

    for i, (param, grad) in enumerate(zip(params, grads)):
        if grad is None:
            continue
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape or state.first_moments[i].shape != param.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match parameter shape {param.shape}")
        m = state.first_moments[i] = config.beta1 * state.first_moments[i] + (1.0 - config.beta1) * grad
        v = state.second_moments[i] = config.beta2 * state.second_moments[i] + (1.0 - config.beta2) * grad * grad
        update = config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)
        param.data -= update.astype(param.dtype)
    return params


class Adam:
    """Stateful wrapper binding a parameter list to its Adam moments."""

    def __init__(self, params: Sequence[Tensor], config: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.config = config
        self.state = AdamState.for_params(self.params)

    @property
    def learning_rate(self) -> float:
        return self.config.learning_rate

    @property
    def step_count(self) -> int:
        return self.state.step

    def step(self):
        optimizer_step(self.params, [p.grad for p in self.params], self.state, self.config)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
