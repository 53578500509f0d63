"""Global operation counters for FFTs and spline interpolations."""
import threading
from collections import Counter
from contextlib import contextmanager

_lock = threading.Lock()
COUNTS = Counter()


def bump(name, k=1):
    with _lock:
        COUNTS[name] += k


@contextmanager
def tally():
    """Collect the counter increments that happen inside the block.

    >>> with tally() as t:
    ...     bump("fft", 3)
    >>> t["fft"]
    3
    """
    with _lock:
        start = Counter(COUNTS)
    out = Counter()
    try:
        yield out
    finally:
        with _lock:
            for key, val in COUNTS.items():
                if val != start.get(key, 0):
                    out[key] = val - start.get(key, 0)
