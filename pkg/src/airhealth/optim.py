"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters.

    Moments are zero while step_count == 0.
    """

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DomainError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name, value in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0 < value < 1:
                raise DomainError(f"{name} must be in (0,1), got {value}")
        if self.epsilon <= 0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")

    @classmethod
    def create_for(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update, applied to `params` in place.

    Returns (params, state) for call-site convenience. Zero gradients
    leave parameters bit-identical (fixed point).
    """
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape or state.first_moment[key].shape != p.shape:
            raise DimensionError(f"gradient/moment shape mismatch for {key}", g.shape, p.shape)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for key, p in params.items():
        g = grads[key]
        m = state.first_moment[key]
        v = state.second_moment[key]
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
