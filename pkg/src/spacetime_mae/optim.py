"""AdamW with decoupled weight decay, warmup+cosine learning rate, global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimState:
    lr: float = 1.6e-3
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.05
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def no_decay(name: str) -> bool:
    """Positional tables, biases, norm parameters and the mask token are not decayed."""
    return name.endswith(".bias") or "norm" in name or "pos" in name or name == "mask_token"


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState,
               lr_now: float, decay_mask: dict[str, bool] | None = None) -> None:
    """One in-place AdamW update of every parameter that has a gradient.

    ``decay_mask[name]`` False disables weight decay for that parameter.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name in sorted(grads):
        p = params[name]
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        wd = state.weight_decay if decay_mask is None or decay_mask.get(name, True) else 0.0
        if wd:
            update = update + wd * p
        p -= (lr_now * update).astype(p.dtype, copy=False)


def lr_at(base_lr: float, warmup_steps: float, total_steps: float, step: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then half-cosine decay to 0."""
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(total_steps - warmup_steps, 1e-12)
    progress = min(max((step - warmup_steps) / span, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    # fixed (sorted) accumulation order keeps the norm bit-reproducible
    return math.sqrt(sum(float(np.sum(grads[k].astype(np.float64) ** 2)) for k in sorted(grads)))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: (g * factor).astype(g.dtype, copy=False) for k, g in grads.items()}
