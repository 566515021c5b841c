"""Adan optimiser and cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class AdanState:
    """Per-parameter moments for Adan.

    ``m`` averages gradients, ``v`` averages consecutive gradient differences
    and ``n`` averages the squared Nesterov-corrected gradient. Betas are the
    decay factors of those averages.
    """

    betas: tuple[float, float, float] = (0.98, 0.92, 0.99)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    n: dict[str, np.ndarray] = field(default_factory=dict)
    prev_grad: dict[str, np.ndarray] = field(default_factory=dict)
    rejected_steps: int = 0

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for kind in ("m", "v", "n", "prev_grad"):
            for k, a in getattr(self, kind).items():
                out[f"{kind}/{k}"] = a
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], **kwargs) -> AdanState:
        state = cls(**kwargs)
        for key, a in arrays.items():
            kind, name = key.split("/", 1)
            getattr(state, kind)[name] = np.array(a)
        return state


def adan_step(params: Mapping[str, Tensor], state: AdanState, lr: float, grads: Mapping[str, np.ndarray] | None = None) -> bool:
    """Apply one Adan update in place.

    Gradients default to each parameter's ``grad`` buffer; parameters without
    a gradient are skipped. Returns False (and changes nothing) when any
    gradient is non-finite.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.rejected_steps += 1
        return False

    b1, b2, b3 = state.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    bc3 = 1.0 - b3**t
    for name, g in grads.items():
        p = params[name]
        dt = p.data.dtype
        g = np.asarray(g, dtype=dt)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.n[name] = np.zeros_like(p.data)
            state.prev_grad[name] = g.copy()
        m, v, n = state.m[name], state.v[name], state.n[name]
        diff = g - state.prev_grad[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * diff
        corrected = g + b2 * diff
        n *= b3
        n += (1.0 - b3) * corrected * corrected
        denom = np.sqrt(n / bc3) + state.eps
        update = (m / bc1 + b2 * v / bc2) / denom
        p.data -= (lr * update).astype(dt)
        if state.weight_decay:
            p.data /= 1.0 + lr * state.weight_decay
        state.prev_grad[name] = g.copy()
    return True


def cosine_lr(step: int, total: int, lr_init: float = 5e-3, lr_min: float = 1e-6) -> float:
    """lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total)) / 2."""
    if total <= 0:
        return lr_init
    step = min(max(step, 0), total)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / total))
