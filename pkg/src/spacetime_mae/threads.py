"""Worker-count control for the BLAS pools numpy delegates to."""

from __future__ import annotations

import os
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

from .video import ConfigError

ENV_VAR = "SPACETIME_MAE_THREADS"


def configured_threads() -> int:
    """Value of SPACETIME_MAE_THREADS; 1 (fully deterministic) when unset."""
    raw = os.environ.get(ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


@contextmanager
def thread_limit(n: int | None = None):
    """Cap native thread pools at ``n`` (default: the environment setting)."""
    n = configured_threads() if n is None else n
    with threadpool_limits(limits=n):
        yield n
