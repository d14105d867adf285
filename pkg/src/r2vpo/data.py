"""Rollout data containers shared by the trainer and the replay buffer."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass
class TransitionBatch:
    """Flat batch of transitions with estimation outputs frozen in.

    `states` are the observations exactly as the policy consumed them
    (i.e. already normalized); `log_prob_off`, `advantages`, and `returns`
    are fixed at collection time and never recomputed downstream.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_prob_off: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=float))
        n = self.states.shape[0] if self.states.ndim == 2 else -1
        if self.states.ndim != 2 or self.actions.ndim != 2 or n < 1:
            raise ValueError(
                f"states/actions must be nonempty 2-D, got {self.states.shape} "
                f"and {self.actions.shape}"
            )
        for f in fields(self):
            arr = getattr(self, f.name)
            if arr.shape[0] != n:
                raise ValueError(f"{f.name} has leading dim {arr.shape[0]}, expected {n}")
            if f.name not in ("states", "actions") and arr.ndim != 1:
                raise ValueError(f"{f.name} must be 1-D, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f.name} contains non-finite values")

    def __len__(self) -> int:
        return self.states.shape[0]

    def take(self, indices) -> "TransitionBatch":
        """Row subset (copies) in the given index order."""
        indices = np.asarray(indices)
        return TransitionBatch(**{f.name: getattr(self, f.name)[indices] for f in fields(self)})

    def frozen_copy(self) -> "TransitionBatch":
        """Deep copy with every array marked read-only."""
        copies = {}
        for f in fields(self):
            arr = getattr(self, f.name).copy()
            arr.setflags(write=False)
            copies[f.name] = arr
        out = TransitionBatch.__new__(TransitionBatch)
        for name, arr in copies.items():
            object.__setattr__(out, name, arr)
        return out

    @staticmethod
    def concat(batches) -> "TransitionBatch":
        batches = list(batches)
        if not batches:
            raise ValueError("nothing to concatenate")
        return TransitionBatch(
            **{
                f.name: np.concatenate([getattr(b, f.name) for b in batches])
                for f in fields(batches[0])
            }
        )
