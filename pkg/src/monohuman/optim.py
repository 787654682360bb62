from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

DEFAULT_LR = 5e-5


@dataclass
class OptimizerState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class MissingGradError(RuntimeError):
    pass


def adamw_step(params: dict[str, Tensor], state: OptimizerState) -> OptimizerState:
    """One AdamW update (decoupled weight decay) applied in place to ``params``."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise MissingGradError(f"no grad for parameters: {missing[:5]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    for k, p in params.items():
        g = p.grad.astype(np.float32)
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p.data *= 1 - state.lr * state.weight_decay
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
