"""Brownian-sheet increments on the space-time grid with reproducible,
non-overlapping streams per Monte Carlo replica.

Each replica owns a counter-based Philox stream keyed by
(master_seed, stream_domain_tag, replica_id), so any subset of replicas
can run in any order on any number of workers and still produce the exact
draws of a serial run.  One time slice holds independent N(0, dt*dx)
increments, one per spatial cell; row k of a block draw is identical to
the k-th sequential slice draw (Philox output is invariant to how the
draws are batched, which the test suite pins down).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEFAULT_MASTER_SEED",
    "NoiseSlice",
    "SeedSpec",
    "StreamTag",
    "derive_stream",
    "sample_block",
    "sample_slice",
]

# fixed default so CI runs are reproducible without any flags
DEFAULT_MASTER_SEED = 0x5EED_CAFE_F00D


class StreamTag(enum.IntEnum):
    """Purpose tag mixed into the stream key; keeps the solution path,
    the frozen-coefficient path, and bootstrap resampling independent."""

    SOLUTION = 0
    FROZEN = 1
    BOOTSTRAP = 2


_TAG_SHIFT = 56
_REPLICA_LIMIT = 1 << _TAG_SHIFT


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int = DEFAULT_MASTER_SEED
    replica_id: int = 0
    stream_domain_tag: StreamTag = StreamTag.SOLUTION

    def __post_init__(self):
        if not 0 <= self.master_seed < 1 << 64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        if not 0 <= self.replica_id < _REPLICA_LIMIT:
            raise ValueError(f"replica_id must lie in [0, 2^{_TAG_SHIFT})")

    def with_replica(self, replica_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, replica_id, self.stream_domain_tag)

    def with_tag(self, tag: StreamTag) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.replica_id, tag)


@dataclass
class NoiseSlice:
    """Increments of one time level: values[i] integrates the sheet over
    cell i of that level, distributed N(0, dt * dx)."""

    values: np.ndarray
    time_index: int
    grid_ref: tuple = field(default=())


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Deterministic generator for one (seed, replica, tag) triple."""
    key = np.array(
        [seed.master_seed, (int(seed.stream_domain_tag) << _TAG_SHIFT) | seed.replica_id],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _check_index(grid, time_index):
    if not 0 <= time_index < grid.n_time:
        raise IndexError(
            f"time_index {time_index} outside horizon [0, {grid.n_time})"
        )


def sample_block(stream: np.random.Generator, grid, time_index: int, count: int) -> np.ndarray:
    """Draw ``count`` consecutive slices at once; row k equals the slice at
    time_index + k that sequential sampling would produce."""
    _check_index(grid, time_index)
    _check_index(grid, time_index + count - 1)
    scale = np.sqrt(grid.dt * grid.dx)
    return stream.standard_normal((count, grid.n_space)) * scale


def sample_slice(stream: np.random.Generator, grid, time_index: int) -> NoiseSlice:
    """Next time slice of sheet increments from the replica's stream."""
    values = sample_block(stream, grid, time_index, 1)[0]
    return NoiseSlice(values=values, time_index=time_index, grid_ref=(grid.n_space, grid.n_time))
