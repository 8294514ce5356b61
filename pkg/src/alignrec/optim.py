"""Adam with bias correction over named parameter collections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared step counter.

    `lr` holds the current schedule value and is updated by the caller
    before each step.
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Missing grads are skipped."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise DimensionError(
                f"adam_step: grad shape {g.shape} does not match param '{name}' "
                f"shape {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
