"""Central finite-difference oracle for the tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences; mutates ``t.data`` in place and restores it."""
    grad = np.zeros_like(t.data, dtype=np.float64)
    flat = t.data.reshape(-1)
    g = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a-b| / max(|a|, |b|, floor), taken over the whole array.

    The floor keeps identically-zero gradients (e.g. attention key biases,
    which softmax shift invariance cancels) from dividing roundoff by zero.
    """
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[int, float]:
    """Compare tape gradients against finite differences for each tensor.

    Returns relative error per tensor position. ``max_entries`` subsamples
    coordinates of large tensors to keep the oracle cheap.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    errors = {}
    for k, t in enumerate(tensors):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if max_entries is None or t.data.size <= max_entries:
            numeric = numeric_grad(fn, t, step)
            errors[k] = rel_error(analytic, numeric)
            continue
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(t.data.size, size=max_entries, replace=False)
        flat = t.data.reshape(-1)
        num = np.empty(max_entries)
        with no_grad():
            for j, i in enumerate(picks):
                orig = flat[i]
                flat[i] = orig + step
                hi = float(fn().data)
                flat[i] = orig - step
                lo = float(fn().data)
                flat[i] = orig
                num[j] = (hi - lo) / (2.0 * step)
        errors[k] = rel_error(analytic.reshape(-1)[picks], num)
    return errors
