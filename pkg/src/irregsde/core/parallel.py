"""Block-parallel Monte Carlo with results independent of thread count.

Paths are cut into fixed-size blocks; block ``b`` always draws from
``stream.split(b)`` and partial results are combined by a pairwise tree in
block order. The thread pool only changes *when* a block runs, never what it
computes or how it is reduced.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

from .rng import RngStream

T = TypeVar("T")

THREADS_ENV = "IRREGSDE_THREADS"
DEFAULT_BLOCK = 2000


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def block_sizes(M: int, block_size: int = DEFAULT_BLOCK) -> list[int]:
    if M < 1:
        raise ValueError("need at least one path")
    full, rest = divmod(int(M), int(block_size))
    return [block_size] * full + ([rest] if rest else [])


def run_blocks(
    fn: Callable[[int, RngStream, int], T],
    M: int,
    stream: RngStream,
    threads: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> list[T]:
    """Evaluate ``fn(block_index, block_stream, block_paths)`` for every block.

    Results come back in block order whatever the number of threads.
    """
    sizes = block_sizes(M, block_size)
    jobs = [(b, stream.split(b), m) for b, m in enumerate(sizes)]
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(jobs) == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def tree_reduce(items: Sequence[T], op: Callable[[T, T], T]) -> T:
    """Pairwise reduction in a fixed order."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [op(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]
