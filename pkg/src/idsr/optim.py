"""RMSProp with inverse-time learning-rate decay."""
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError


@dataclass
class OptimizerState:
    lr: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-8
    lr_decay: float = 0.01
    step: int = 0
    accumulators: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.epsilon <= 0 or self.lr_decay < 0:
            raise ValueError("epsilon must be positive and lr_decay non-negative")

    @property
    def current_lr(self):
        return self.lr / (1.0 + self.lr_decay * self.step)


def rmsprop_step(params, grads, state):
    """Apply one RMSProp update in place.

    ``params`` maps names to :class:`~idsr.tensor.Tensor`; ``grads`` maps the
    same names to arrays. Every gradient is validated before any parameter
    moves, so a rejected step leaves both params and state untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ValueError(f"gradient shape {np.shape(g)} != parameter {name!r} shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")

    lr = state.current_lr
    rho = state.rho
    for name, g in grads.items():
        p = params[name]
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros_like(p.data)
        acc = rho * acc + (1.0 - rho) * np.square(g)
        state.accumulators[name] = acc.astype(p.dtype, copy=False)
        p.data = (p.data - lr * g / (np.sqrt(acc) + state.epsilon)).astype(p.dtype, copy=False)
    state.step += 1
    return params, state
