"""Allocator tuning for the CLI and test entry points.

The training loops allocate many short-lived ~1 MB arrays.  With glibc's
default dynamic mmap threshold each one is mapped and unmapped afresh and
the page faults dominate the arithmetic, so large blocks are kept on the heap.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_LIMIT = 32 * 1024 * 1024


def tune_malloc():
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, _LIMIT) and libc.mallopt(_M_TRIM_THRESHOLD, 4 * _LIMIT)
    except (OSError, AttributeError):
        return False
    return bool(ok)
