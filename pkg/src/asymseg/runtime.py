"""Thread-count control for the numeric backends."""

from __future__ import annotations

import os

from threadpoolctl import threadpool_limits

from .errors import ConfigError

ENV_THREADS = "ASYMSEG_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``ASYMSEG_THREADS``, else 1 (bit-reproducible)."""
    if threads is None:
        raw = os.environ.get(ENV_THREADS, "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{ENV_THREADS}={raw!r} is not an integer") from exc
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads


def thread_limit(threads: int | None = None):
    """Context manager capping BLAS/OpenMP pools."""
    return threadpool_limits(limits=resolve_threads(threads))
