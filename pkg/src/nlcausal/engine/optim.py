"""Adam optimizer with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared hyperparameters."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, params: list[np.ndarray], lr: float, weight_decay: float = 0.0, **kw) -> "AdamState":
        state = cls(lr=lr, weight_decay=weight_decay, **kw)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One in-place Adam update; weight decay is applied decoupled from the moments."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads, and state must have matching lengths")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= state.lr * update
    return params


class Adam:
    """Tensor-level convenience wrapper around :func:`adam_step`."""

    def __init__(self, tensors: list[Tensor], lr: float, weight_decay: float = 0.0, **kw):
        self.tensors = list(tensors)
        self.state = AdamState.init([t.data for t in self.tensors], lr, weight_decay, **kw)

    def step(self, lr: float | None = None) -> None:
        if lr is not None:
            self.state.lr = lr
        grads = []
        for t in self.tensors:
            if t.grad is None:
                grads.append(np.zeros_like(t.data))
            else:
                grads.append(t.grad)
        adam_step([t.data for t in self.tensors], grads, self.state)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def lr_at(step: int, total_steps: int, lr: float, lr_final: float | None) -> float:
    """Linear decay from ``lr`` to ``lr_final`` over the run; constant if final unset."""
    if lr_final is None or total_steps <= 1:
        return lr
    frac = step / (total_steps - 1)
    return lr + frac * (lr_final - lr)
