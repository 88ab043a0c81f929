"""Batched priority lock: native lock, queue simulator, metrics and harness."""

from ._core import (
    BatchedPriorityLock,
    __version__,
    batch_count_bits,
    count_inversions,
    explore,
    next_batch_word,
    simulate,
    stress,
    uncontested,
    weighted_mean_delay,
)

__all__ = [
    "BatchedPriorityLock",
    "batch_count_bits",
    "count_inversions",
    "explore",
    "next_batch_word",
    "simulate",
    "stress",
    "uncontested",
    "weighted_mean_delay",
]
