"""Advantage estimation and the input/return conditioning around it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AdvantageConfig:
    """Knobs for advantage estimation and reward/observation conditioning.

    gamma: discount factor, 0 <= gamma < 1.
    lambda_gae: exponential weighting of n-step terms, 0 <= lambda_gae <= 1.
    reward_scale: multiplier applied to raw rewards before estimation.
    normalize_advantages: standardize advantages per optimization batch.
    group_size: completions per group for group-relative scoring.
    group_std_epsilon: std floor below which a group scores zero.
    """

    gamma: float = 0.995
    lambda_gae: float = 0.95
    reward_scale: float = 10.0
    normalize_advantages: bool = True
    group_size: int = 8
    group_std_epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma!r}")
        if not 0.0 <= self.lambda_gae <= 1.0:
            raise ValueError(f"lambda_gae must be in [0, 1], got {self.lambda_gae!r}")
        if not self.reward_scale > 0.0:
            raise ValueError(f"reward_scale must be > 0, got {self.reward_scale!r}")
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size!r}")
        if not self.group_std_epsilon > 0.0:
            raise ValueError(f"group_std_epsilon must be > 0, got {self.group_std_epsilon!r}")


def gae(rewards, values, bootstrap_value, dones, config: AdvantageConfig):
    """Generalized advantage estimates and value targets.

    Arrays are (T,) or (T, N) with time leading.  `dones` marks transitions
    after which no value bootstraps (1.0 cuts, 0.0 continues);
    `bootstrap_value` is V(s_T) for the state following the last row.

    Returns (advantages, returns) where returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(
            f"shape mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    if rewards.ndim not in (1, 2) or rewards.shape[0] == 0:
        raise ValueError(f"expected nonempty (T,) or (T, N) arrays, got {rewards.shape}")
    if not np.all((dones == 0.0) | (dones == 1.0)):
        raise ValueError("dones must be 0/1 flags")
    bootstrap = np.asarray(bootstrap_value, dtype=float)
    if bootstrap.shape != rewards.shape[1:]:
        raise ValueError(
            f"bootstrap_value shape {bootstrap.shape} does not match row shape {rewards.shape[1:]}"
        )

    advantages = np.zeros_like(rewards)
    carry = np.zeros_like(bootstrap)
    next_values = bootstrap
    for t in reversed(range(rewards.shape[0])):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + config.gamma * next_values * not_done - values[t]
        carry = delta + config.gamma * config.lambda_gae * not_done * carry
        advantages[t] = carry
        next_values = values[t]
    return advantages, advantages + values


def group_relative_advantage(rewards, config: AdvantageConfig):
    """Score each reward against its own group: (r - mean) / (std + eps).

    `rewards` is flat with length divisible by group_size; consecutive
    entries form a group.  Groups whose population std falls below
    group_std_epsilon score zero throughout.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 1 or rewards.size == 0:
        raise ValueError(f"expected a nonempty flat reward vector, got shape {rewards.shape}")
    if rewards.size % config.group_size != 0:
        raise ValueError(
            f"{rewards.size} rewards do not split into groups of {config.group_size}"
        )
    groups = rewards.reshape(-1, config.group_size)
    mean = groups.mean(axis=1, keepdims=True)
    std = groups.std(axis=1, keepdims=True)
    scores = (groups - mean) / (std + config.group_std_epsilon)
    scores = np.where(std < config.group_std_epsilon, 0.0, scores)
    return scores.reshape(-1)


def scale_rewards(rewards, config: AdvantageConfig):
    return np.asarray(rewards, dtype=float) * config.reward_scale


def normalize_advantages(advantages):
    """Standardize to mean 0 / std 1; degenerate batches come back all-zero."""
    advantages = np.asarray(advantages, dtype=float)
    std = float(advantages.std())
    if std <= 1e-8:
        return np.zeros_like(advantages)
    return (advantages - advantages.mean()) / std


@dataclass
class RunningStats:
    """Streaming per-dimension mean/variance (Chan's parallel update)."""

    count: float
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "RunningStats":
        return cls(0.0, np.zeros(dim), np.zeros(dim))

    def update(self, batch) -> None:
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.mean.size:
            raise ValueError(
                f"expected batch of shape (N, {self.mean.size}), got {batch.shape}"
            )
        n = batch.shape[0]
        if n == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + batch_m2 + delta**2 * (self.count * n / total)
        self.count = total

    @property
    def variance(self) -> np.ndarray:
        """Unbiased variance; zero until two samples exist."""
        if self.count > 1:
            return self.m2 / (self.count - 1)
        return np.zeros_like(self.m2)

    def normalize(self, batch, clip: float = 10.0) -> np.ndarray:
        batch = np.asarray(batch, dtype=float)
        out = (batch - self.mean) / np.sqrt(self.variance + 1e-8)
        return np.clip(out, -clip, clip)


def update_and_normalize_obs(stats: RunningStats, obs) -> np.ndarray:
    """Fold a raw observation batch into the stats, then standardize it."""
    stats.update(obs)
    return stats.normalize(obs)
