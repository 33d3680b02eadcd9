"""Worker-thread cap shared by scene generation and metric reduction.

LANEGRID_THREADS limits the pool size; unset or 1 means run sequentially.
Results always come back in input order, so threading never changes any
output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_cap() -> int:
    raw = os.environ.get("LANEGRID_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"LANEGRID_THREADS must be an integer, got {raw!r}")
    return max(cap, 1)


def ordered_map(fn, items):
    """Map fn over items, in parallel when the cap allows; ordered results."""
    items = list(items)
    cap = thread_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=cap) as pool:
        return list(pool.map(fn, items))
