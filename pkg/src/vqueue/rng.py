"""Seeded, splittable random streams and the chunked replica runner.

Each stream is a Philox4x64 counter-based generator keyed by
``(master_seed, replica_index)``; distinct keys give independent streams.
Batch experiments split their replicas into fixed-size chunks and give each
chunk a child stream ``seed.spawn(tag, chunk)``. Chunk boundaries never
depend on the number of workers, so results are identical for any
``jobs``.
"""
from __future__ import annotations

import contextlib
import contextvars
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = ["SeedSpec", "CHUNK_SIZE", "chunk_sizes", "run_chunks", "default_jobs", "record_streams"]

CHUNK_SIZE = 4096
_U64 = (1 << 64) - 1
_stream_log: contextvars.ContextVar[list | None] = contextvars.ContextVar("stream_log", default=None)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replica_index: int = 0

    def __post_init__(self):
        for name in ("master_seed", "replica_index"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _U64):
                raise ValueError(f"{name} must fit in 64 unsigned bits, got {v}")
            object.__setattr__(self, name, int(v))

    def bit_generator(self) -> np.random.Philox:
        return np.random.Philox(key=[self.master_seed, self.replica_index])

    def generator(self) -> np.random.Generator:
        return np.random.Generator(self.bit_generator())

    def spawn(self, *path) -> "SeedSpec":
        """Child stream for a labelled sub-task, e.g. ``spawn("start", 3, 0)``.

        The child index is the first 8 bytes of a BLAKE2b digest over the
        parent index and the path, so it is stable across runs and platforms.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(str(self.replica_index).encode())
        for p in path:
            h.update(b"/")
            h.update(str(p).encode())
        return SeedSpec(self.master_seed, int.from_bytes(h.digest(), "little"))

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "replica_index": self.replica_index}


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def chunk_sizes(count: int, chunk: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(int(count), chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_chunks(task, count: int, seed: SeedSpec, tag, jobs: int = 1, chunk: int = CHUNK_SIZE):
    """Run ``task(size, bit_generator)`` over fixed chunks; results in chunk order.

    Kernels release the GIL, so threads give real parallelism with the
    compiled backend.
    """
    sizes = chunk_sizes(count, chunk)
    seeds = [seed.spawn(tag, i) for i in range(len(sizes))]
    log = _stream_log.get()
    if log is not None:
        log.extend({"tag": repr(tag), "chunk": i, "size": sizes[i], **s.to_dict()}
                   for i, s in enumerate(seeds))

    def one(i):
        return task(sizes[i], seeds[i].bit_generator())

    if jobs <= 1 or len(sizes) <= 1:
        return [one(i) for i in range(len(sizes))], seeds
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(sizes)))), seeds


@contextlib.contextmanager
def record_streams():
    """Collect a description of every chunk stream used inside the block."""
    log: list = []
    token = _stream_log.set(log)
    try:
        yield log
    finally:
        _stream_log.reset(token)
