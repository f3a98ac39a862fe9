"""Input validation helpers."""

import numpy as np

from .exceptions import DomainError


def check_octets(value, length, name):
    """Return ``value`` as ``bytes`` after checking it is exactly ``length`` octets."""
    if isinstance(value, (bytearray, memoryview)):
        value = bytes(value)
    if not isinstance(value, bytes):
        raise DomainError(f"{name} must be bytes, got {type(value).__name__}")
    if len(value) != length:
        raise DomainError(f"{name} must be exactly {length} octets, got {len(value)}")
    return value


def check_int_range(value, lo, hi, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise DomainError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise DomainError(f"{name}={value} outside [{lo}, {hi}]")
    return int(value)


def check_count_matrix(counts, name="counts"):
    """Validate a 2-D array of non-negative integer counts (runs x cells)."""
    arr = np.asarray(counts)
    if arr.ndim != 2:
        raise DomainError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DomainError(f"{name} is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise DomainError(f"{name} must hold integer counts")
        arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    return arr.astype(np.int64, copy=False)
