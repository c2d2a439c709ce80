"""Adamax optimiser, cosine-annealed learning rate and gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ContractViolation, Tensor


@dataclass
class AdamaxState:
    m: list[np.ndarray]
    u: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamaxState":
        arrays = [p.data if isinstance(p, Tensor) else np.asarray(p) for p in params]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


def adamax_step(params, grads, state: AdamaxState, lr: float) -> None:
    """Apply one Adamax update in place to ``params`` and ``state``.

    ``params`` may be :class:`Tensor` objects or raw arrays; both are updated
    in place.
    """
    if lr <= 0:
        raise ContractViolation(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.u)):
        raise ContractViolation("params, grads and optimiser state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_size = lr / (1.0 - b1 ** state.step)
    for p, g, m, u in zip(params, grads, state.m, state.u):
        data = p.data if isinstance(p, Tensor) else p
        if data.shape != g.shape or m.shape != g.shape:
            raise ContractViolation(f"shape mismatch: param {data.shape}, grad {g.shape}, state {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        np.maximum(b2 * u, np.abs(g), out=u)
        data -= (step_size * m / (u + state.eps)).astype(data.dtype, copy=False)


def cosine_anneal_lr(epoch: float, total_epochs: int, lr0: float) -> float:
    if total_epochs <= 0:
        raise ContractViolation("total_epochs must be positive")
    if lr0 <= 0:
        raise ContractViolation("lr0 must be positive")
    if not 0 <= epoch <= total_epochs:
        raise ContractViolation(f"epoch {epoch} outside [0, {total_epochs}]")
    return max(0.0, lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs)))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
