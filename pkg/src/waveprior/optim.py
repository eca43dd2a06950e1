"""Adam optimizer and a central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, zero_grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.t < 0:
            raise ValueError(f"step counter must be non-negative, got {self.t}")

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Gradients are left untouched."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"Adam state tracks {len(state.m)} tensors, got {len(params)} params")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} of shape {p.shape} has no gradient")
        if state.m[i].shape != p.shape:
            raise ValueError(f"adam_step: state shape {state.m[i].shape} != param shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def finite_difference_check(
    build_graph: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between backprop gradients and central differences.

    ``build_graph`` must rebuild the scalar loss from the current values of
    ``params`` on every call and be deterministic; a graph that draws fresh
    randomness per call gives meaningless results.
    """
    zero_grads(params)
    loss = build_graph()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = build_graph().item()
            flat[i] = orig - epsilon
            down = build_graph().item()
            flat[i] = orig
            cd = (up - down) / (2.0 * epsilon)
            denom = max(np.abs(a_flat[i]), np.abs(cd), 1e-8)
            worst = max(worst, np.abs(a_flat[i] - cd) / denom)
    zero_grads(params)
    return float(worst)
