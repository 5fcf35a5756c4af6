"""Fixed-size sample chunks dispatched over a thread pool.

Chunk boundaries depend only on the sample count, never on the number of
workers, so per-sample results are bit-identical for any thread count.
"""

import logging
import os
from collections.abc import Callable, Iterator
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256


def resolve_threads(threads: int) -> int:
    """Translate 0 (or negative) into the machine parallelism."""
    if threads > 0:
        return threads
    return os.cpu_count() or 1


def chunks(n: int, size: int = CHUNK_SIZE) -> Iterator[tuple[int, int]]:
    for start in range(0, n, size):
        yield start, min(start + size, n)


def run_chunked(
    n: int,
    work: Callable[[int, int], None],
    threads: int = 1,
    size: int = CHUNK_SIZE,
) -> None:
    """Call `work(start, stop)` for each chunk of range(n).

    `work` must write only into its own slice of preallocated outputs.
    Exceptions raised by a chunk propagate in chunk order.
    """
    spans = list(chunks(n, size))
    workers = min(resolve_threads(threads), len(spans)) if spans else 1
    logger.debug("Dispatching %d chunks over %d workers", len(spans), workers)
    if workers <= 1:
        for start, stop in spans:
            work(start, stop)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(work, start, stop) for start, stop in spans]
        for future in futures:
            future.result()
