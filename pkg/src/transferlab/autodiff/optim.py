"""Adam with bias correction and an inverse-square-root warmup schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from transferlab.autodiff.tensor import Tensor
from transferlab.errors import ShapeError


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def inverse_sqrt_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear ramp to ``base_lr`` over ``warmup_steps``, then decay as 1/sqrt(step)."""
    step = max(step, 1)
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float | None = None) -> AdamState:
    """Update ``params`` in place from ``grads`` and advance ``state``.

    Tensors with ``requires_grad`` false, or without a gradient this step, are
    skipped entirely: their values and moments stay untouched.
    """
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if not p.requires_grad or name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return state
