"""Iteration-granular FIFO replay with uniform transition sampling.

The buffer holds whole collection iterations as immutable entries.  Age is
measured in iterations: a transition collected at iteration i and sampled at
iteration t has staleness t - i, so capacity 1 reproduces the on-policy data
path and larger capacities let the off-policy loop rehearse old batches.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import TransitionBatch


@dataclass(frozen=True)
class ReplayConfig:
    capacity_iterations: int = 4
    utd_ratio: int = 2
    sampling: str = "uniform"

    def __post_init__(self):
        if self.capacity_iterations < 1:
            raise ValueError(f"capacity_iterations must be >= 1, got {self.capacity_iterations!r}")
        if self.utd_ratio < 1:
            raise ValueError(f"utd_ratio must be >= 1, got {self.utd_ratio!r}")
        if self.sampling != "uniform":
            raise ValueError(f"unsupported sampling scheme {self.sampling!r}")


@dataclass(frozen=True)
class ReplayEntry:
    iteration_id: int
    batch: TransitionBatch


class ReplayBuffer:
    def __init__(self, config: ReplayConfig):
        self.config = config
        self._entries: deque[ReplayEntry] = deque()
        self._flat: tuple[TransitionBatch, np.ndarray] | None = None

    def _flat_view(self) -> tuple[TransitionBatch, np.ndarray]:
        """Concatenation of all stored entries, rebuilt after each push."""
        if self._flat is None:
            batch = TransitionBatch.concat([e.batch for e in self._entries])
            ids = np.concatenate(
                [np.full(len(e.batch), e.iteration_id, dtype=int) for e in self._entries]
            )
            self._flat = (batch, ids)
        return self._flat

    @property
    def n_iterations(self) -> int:
        return len(self._entries)

    @property
    def n_transitions(self) -> int:
        return sum(len(e.batch) for e in self._entries)

    def entries(self) -> tuple[ReplayEntry, ...]:
        return tuple(self._entries)

    def push_iteration(self, iteration_id: int, batch: TransitionBatch) -> None:
        """Store a collection iteration, evicting the oldest beyond capacity."""
        iteration_id = int(iteration_id)
        if self._entries and iteration_id <= self._entries[-1].iteration_id:
            raise ValueError(
                f"iteration ids must increase, got {iteration_id} after "
                f"{self._entries[-1].iteration_id}"
            )
        self._entries.append(ReplayEntry(iteration_id, batch.frozen_copy()))
        while len(self._entries) > self.config.capacity_iterations:
            self._entries.popleft()
        self._flat = None

    def sample_minibatch(
        self, size: int, rng: np.random.Generator, current_iteration: int
    ) -> tuple[TransitionBatch, np.ndarray]:
        """Uniform (with replacement) draw over every stored transition.

        Returns the sampled batch plus each sample's staleness in iterations.
        """
        if size < 1:
            raise ValueError(f"minibatch size must be >= 1, got {size!r}")
        if not self._entries:
            raise ValueError("cannot sample from an empty replay buffer")
        if current_iteration < self._entries[-1].iteration_id:
            raise ValueError(
                f"current_iteration {current_iteration} predates newest stored "
                f"iteration {self._entries[-1].iteration_id}"
            )
        batch, ids = self._flat_view()
        flat = rng.integers(0, len(batch), size=size)
        staleness = int(current_iteration) - ids[flat]
        return batch.take(flat), staleness

    def staleness_histogram(self, current_iteration: int) -> dict[int, int]:
        """Transition counts keyed by age (iterations since collection)."""
        hist: dict[int, int] = {}
        for e in self._entries:
            age = int(current_iteration) - e.iteration_id
            hist[age] = hist.get(age, 0) + len(e.batch)
        return hist
