"""glibc allocator tuning for the training hot path.

Training allocates and frees hundreds of MB of patch matrices and activation
gradients per batch.  glibc serves such blocks with mmap and returns them to
the kernel on free, so every step pays the page-fault cost again.  Raising
the mmap threshold keeps big blocks on the heap for reuse, which removes
most of that overhead at the price of a retained high-water heap.
"""

import ctypes
import logging

logger = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3

_enabled = False


def keep_large_allocations() -> bool:
    """Raise glibc's mmap/trim thresholds once per process; returns success."""
    global _enabled
    if _enabled:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        ok1 = libc.mallopt(ctypes.c_int(_M_MMAP_THRESHOLD), ctypes.c_int(1 << 30))
        ok2 = libc.mallopt(ctypes.c_int(_M_TRIM_THRESHOLD), ctypes.c_int(1 << 30))
        _enabled = bool(ok1) and bool(ok2)
    except (OSError, AttributeError):  # non-glibc platforms
        logger.debug("mallopt unavailable; large allocations stay mmap-backed")
        _enabled = False
    return _enabled
