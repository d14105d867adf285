"""Deterministic continuous-control environments with vectorized stepping.

Three desk-scale tasks, all pure numpy with frozen constants:

* pendulum — torque-limited swing-up, dense shaped reward (1 + cos(theta))/2
  with theta measured from upright.
* cartpole-sparse — swing-up from hanging, reward 1 only while the pole is
  nearly upright and the cart stays near the center.
* reacher-sparse — 2-D double integrator, reward 1 only inside a small disk
  around a goal sampled on the unit ring.

Episodes are fixed length with no early termination; `done` only marks the
step counter reaching episode_length.  Dynamics are semi-implicit Euler
(velocity first, then position).  Actions outside the bounds are clamped at
the env boundary; policies keep their log-probabilities on the unclamped
values.  A single batched code path drives both `step` and
`step_vectorized`, so scalar and vectorized stepping agree bitwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np


class EnvKind(enum.Enum):
    PENDULUM = "pendulum"
    CARTPOLE_SPARSE = "cartpole-sparse"
    REACHER_SPARSE = "reacher-sparse"


@dataclass(frozen=True)
class EnvConfig:
    """Frozen task definition: integration step, horizon, bounds, constants."""

    kind: EnvKind
    dt: float
    episode_length: int
    action_low: tuple
    action_high: tuple
    gravity: float = 9.81
    # pendulum
    mass: float = 1.0
    length: float = 1.0
    damping: float = 0.05
    max_speed: float = 8.0
    # cartpole
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    cart_limit: float = 1.0
    upright_cos: float = 0.95
    # reacher
    drag: float = 0.1
    goal_distance: float = 1.0
    target_radius: float = 0.1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if self.episode_length < 1:
            raise ValueError(f"episode_length must be >= 1, got {self.episode_length!r}")
        low, high = np.asarray(self.action_low), np.asarray(self.action_high)
        if low.shape != high.shape or np.any(low >= high):
            raise ValueError(f"need action_low < action_high, got {low} and {high}")

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def obs_dim(self) -> int:
        return {EnvKind.PENDULUM: 3, EnvKind.CARTPOLE_SPARSE: 5, EnvKind.REACHER_SPARSE: 6}[
            self.kind
        ]


def default_config(kind: EnvKind, episode_length: int | None = None) -> EnvConfig:
    if kind is EnvKind.PENDULUM:
        cfg = EnvConfig(kind, dt=0.02, episode_length=1000, action_low=(-2.0,), action_high=(2.0,))
    elif kind is EnvKind.CARTPOLE_SPARSE:
        cfg = EnvConfig(
            kind, dt=0.02, episode_length=1000, action_low=(-10.0,), action_high=(10.0,)
        )
    elif kind is EnvKind.REACHER_SPARSE:
        cfg = EnvConfig(
            kind, dt=0.05, episode_length=400, action_low=(-1.0, -1.0), action_high=(1.0, 1.0)
        )
    else:
        raise ValueError(f"unknown env kind {kind!r}")
    if episode_length is not None:
        cfg = replace(cfg, episode_length=int(episode_length))
    return cfg


@dataclass
class EnvState:
    """One environment instance: state vector, step counter, reset stream."""

    kind: EnvKind
    q: np.ndarray
    step_count: int
    rng: np.random.Generator


def _initial_q(cfg: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.kind is EnvKind.PENDULUM:
        theta = rng.uniform(math.pi - 0.1, math.pi + 0.1)
        return np.array([theta, 0.0])
    if cfg.kind is EnvKind.CARTPOLE_SPARSE:
        theta = math.pi + rng.uniform(-0.05, 0.05)
        return np.array([0.0, 0.0, theta, 0.0])  # x, x_dot, theta, theta_dot
    angle = rng.uniform(0.0, 2.0 * math.pi)
    gx = cfg.goal_distance * math.cos(angle)
    gy = cfg.goal_distance * math.sin(angle)
    return np.array([0.0, 0.0, 0.0, 0.0, gx, gy])  # px, py, vx, vy, gx, gy


def reset(cfg: EnvConfig, seed) -> tuple[EnvState, np.ndarray]:
    """Fresh instance; `seed` feeds numpy's default_rng (ints, SeedSequences,
    or an existing Generator to continue a stream)."""
    rng = np.random.default_rng(seed)
    q = _initial_q(cfg, rng)
    state = EnvState(cfg.kind, q, 0, rng)
    return state, _observe(cfg, q[None])[0]


def _observe(cfg: EnvConfig, q: np.ndarray) -> np.ndarray:
    if cfg.kind is EnvKind.PENDULUM:
        theta, theta_dot = q[:, 0], q[:, 1]
        return np.stack([np.cos(theta), np.sin(theta), theta_dot], axis=1)
    if cfg.kind is EnvKind.CARTPOLE_SPARSE:
        x, x_dot, theta, theta_dot = q.T
        return np.stack([x, x_dot, np.cos(theta), np.sin(theta), theta_dot], axis=1)
    pos, vel, goal = q[:, 0:2], q[:, 2:4], q[:, 4:6]
    return np.concatenate([pos, vel, goal - pos], axis=1)


def _dynamics(cfg: EnvConfig, q: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One batched semi-implicit Euler step: (q, clamped u) -> (q', reward)."""
    if cfg.kind is EnvKind.PENDULUM:
        theta, theta_dot = q[:, 0], q[:, 1]
        torque = u[:, 0]
        # Rod pivoting at its end: inertia m l^2 / 3, gravity torque through
        # the center of mass at l/2, viscous damping on the joint.
        theta_acc = (
            1.5 * cfg.gravity / cfg.length * np.sin(theta)
            + 3.0 / (cfg.mass * cfg.length**2) * torque
            - cfg.damping * theta_dot
        )
        new_dot = np.clip(theta_dot + theta_acc * cfg.dt, -cfg.max_speed, cfg.max_speed)
        new_theta = theta + new_dot * cfg.dt
        reward = 0.5 * (1.0 + np.cos(new_theta))
        return np.stack([new_theta, new_dot], axis=1), reward

    if cfg.kind is EnvKind.CARTPOLE_SPARSE:
        x, x_dot, theta, theta_dot = q.T
        force = u[:, 0]
        total_mass = cfg.cart_mass + cfg.pole_mass
        ml = cfg.pole_mass * cfg.pole_half_length
        sin, cos = np.sin(theta), np.cos(theta)
        temp = (force + ml * theta_dot**2 * sin) / total_mass
        theta_acc = (cfg.gravity * sin - cos * temp) / (
            cfg.pole_half_length * (4.0 / 3.0 - cfg.pole_mass * cos**2 / total_mass)
        )
        x_acc = temp - ml * theta_acc * cos / total_mass
        new_theta_dot = theta_dot + theta_acc * cfg.dt
        new_theta = theta + new_theta_dot * cfg.dt
        new_x_dot = x_dot + x_acc * cfg.dt
        new_x = x + new_x_dot * cfg.dt
        reward = ((np.cos(new_theta) > cfg.upright_cos) & (np.abs(new_x) < cfg.cart_limit)).astype(
            float
        )
        return np.stack([new_x, new_x_dot, new_theta, new_theta_dot], axis=1), reward

    pos, vel, goal = q[:, 0:2], q[:, 2:4], q[:, 4:6]
    new_vel = vel + (u - cfg.drag * vel) * cfg.dt
    new_pos = pos + new_vel * cfg.dt
    dist = np.sqrt(np.sum((new_pos - goal) ** 2, axis=1))
    reward = (dist < cfg.target_radius).astype(float)
    return np.concatenate([new_pos, new_vel, goal], axis=1), reward


def _check_actions(cfg: EnvConfig, actions: np.ndarray) -> np.ndarray:
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or actions.shape[1] != cfg.action_dim:
        raise ValueError(f"expected actions of shape (N, {cfg.action_dim}), got {actions.shape}")
    if not np.all(np.isfinite(actions)):
        raise ValueError("actions must be finite")
    return np.clip(actions, np.asarray(cfg.action_low), np.asarray(cfg.action_high))


def count_clamped(cfg: EnvConfig, actions) -> int:
    """Elementwise count of action components outside the bounds."""
    actions = np.asarray(actions, dtype=float)
    return int(
        np.count_nonzero(
            (actions < np.asarray(cfg.action_low)) | (actions > np.asarray(cfg.action_high))
        )
    )


def step(state: EnvState, action, cfg: EnvConfig):
    """Advance one env by one step: (next_state, observation, reward, done)."""
    action = np.asarray(action, dtype=float)
    if action.shape != (cfg.action_dim,):
        raise ValueError(f"expected action of shape ({cfg.action_dim},), got {action.shape}")
    u = _check_actions(cfg, action[None])
    q_next, reward = _dynamics(cfg, state.q[None], u)
    count = state.step_count + 1
    next_state = EnvState(state.kind, q_next[0], count, state.rng)
    done = count >= cfg.episode_length
    return next_state, _observe(cfg, q_next)[0], float(reward[0]), done


def step_vectorized(states, actions, cfg: EnvConfig):
    """N independent steps at once; elementwise identical to N `step` calls."""
    states = list(states)
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or actions.shape[0] != len(states):
        raise ValueError(
            f"got {len(states)} states but actions of shape {actions.shape}"
        )
    if any(s.kind is not cfg.kind for s in states):
        raise ValueError("all states must match the config's env kind")
    u = _check_actions(cfg, actions)
    q = np.stack([s.q for s in states])
    q_next, rewards = _dynamics(cfg, q, u)
    obs = _observe(cfg, q_next)
    out = []
    for i, s in enumerate(states):
        count = s.step_count + 1
        next_state = EnvState(s.kind, q_next[i], count, s.rng)
        out.append((next_state, obs[i], float(rewards[i]), count >= cfg.episode_length))
    return out


class VectorEnv:
    """Synchronous batch of one env kind with auto-reset at episode end.

    Each instance owns a reset stream (its EnvState rng); when an episode
    ends, the replacement initial state is drawn from that same stream, so
    trajectories are reproducible per (seed, env index) regardless of batch
    composition.  `action_clamp_events` accumulates elementwise bound clamps.
    """

    def __init__(self, cfg: EnvConfig, seeds):
        self.cfg = cfg
        self.states = []
        obs = []
        for seed in seeds:
            state, o = reset(cfg, seed)
            self.states.append(state)
            obs.append(o)
        if not self.states:
            raise ValueError("need at least one environment")
        self._obs = np.stack(obs)
        self.action_clamp_events = 0

    @property
    def num_envs(self) -> int:
        return len(self.states)

    def observations(self) -> np.ndarray:
        return self._obs.copy()

    def step(self, actions):
        """(observations after auto-reset, rewards, dones)."""
        self.action_clamp_events += count_clamped(self.cfg, actions)
        results = step_vectorized(self.states, actions, self.cfg)
        rewards = np.empty(self.num_envs)
        dones = np.zeros(self.num_envs)
        obs = np.empty((self.num_envs, self.cfg.obs_dim))
        for i, (next_state, o, r, done) in enumerate(results):
            rewards[i] = r
            if done:
                dones[i] = 1.0
                next_state, o = reset(self.cfg, next_state.rng)
            self.states[i] = next_state
            obs[i] = o
        self._obs = obs
        return obs.copy(), rewards, dones


def pendulum_energy(cfg: EnvConfig, q: np.ndarray) -> float:
    """Total mechanical energy of a pendulum state (kinetic + potential)."""
    inertia = cfg.mass * cfg.length**2 / 3.0
    com = 0.5 * cfg.length
    return float(
        0.5 * inertia * q[1] ** 2 + cfg.mass * cfg.gravity * com * math.cos(q[0])
    )


def pendulum_oracle_action(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    """Scripted swing-up used to certify the pendulum task ceiling.

    Away from the top it pumps mechanical energy toward the upright-at-rest
    level (torque with the direction of rotation while below the target
    energy, against it while above); inside a small window around upright a
    PD law takes over and balances.
    """
    theta = math.remainder(float(state.q[0]), math.tau)  # wrap to (-pi, pi]
    omega = float(state.q[1])
    if abs(theta) < 0.35 and abs(omega) < 3.0:
        u = -16.0 * theta - 4.0 * omega
    else:
        gap = pendulum_energy(cfg, np.array([0.0, 0.0])) - pendulum_energy(cfg, state.q)
        direction = math.copysign(1.0, omega) if abs(omega) > 1e-6 else 1.0
        u = 4.0 * gap * direction
    return np.clip(np.array([u]), np.asarray(cfg.action_low), np.asarray(cfg.action_high))


def run_pendulum_oracle(cfg: EnvConfig, seed) -> np.ndarray:
    """Roll the scripted controller for one episode; returns per-step rewards."""
    state, _ = reset(cfg, seed)
    rewards = np.empty(cfg.episode_length)
    for t in range(cfg.episode_length):
        state, _, reward, _ = step(state, pendulum_oracle_action(state, cfg), cfg)
        rewards[t] = reward
    return rewards


def certify_pendulum_ceiling(cfg: EnvConfig, episodes: int, seed: int) -> float:
    """Mean episode return of the scripted controller over seeded episodes."""
    seeds = np.random.SeedSequence(seed).spawn(episodes)
    return float(np.mean([run_pendulum_oracle(cfg, s).sum() for s in seeds]))
