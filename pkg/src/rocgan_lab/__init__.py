"""Desk-scale laboratory for the two-pathway robust conditional GAN."""

# Pin BLAS pools to one thread: the tensors here are small enough that thread
# fan-out costs more than it saves, and single-threaded reductions keep
# results bitwise reproducible across machines with different core counts.
try:
    from threadpoolctl import threadpool_limits as _threadpool_limits

    _BLAS_LIMIT = _threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - threadpoolctl is optional
    _BLAS_LIMIT = None

__version__ = "0.1.0"
