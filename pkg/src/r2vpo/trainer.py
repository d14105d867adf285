"""Training orchestration: rollouts, epoch optimization, dual updates, eval.

Two entry points share one machinery:

* `run_on_policy` — collect a rollout, run `epochs` shuffled-minibatch passes
  over it, update the multiplier once per epoch from that epoch's mean ratio
  second moment, evaluate on a schedule.
* `run_off_policy` — push each rollout into a replay buffer, then take
  `utd_ratio * epochs * minibatches` uniformly sampled gradient steps,
  updating the multiplier after every step.

All baselines route through the same loops; only the policy loss differs
(variance-penalized vs. hard-clipped).  Everything is single-threaded and
seeded through one `np.random.SeedSequence` splitting scheme, so identical
configs produce bitwise-identical metrics.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .advantage import (
    RunningStats,
    gae,
    normalize_advantages,
    scale_rewards,
    update_and_normalize_obs,
)
from .config import Algo, TrainerConfig
from .data import TransitionBatch
from .dual_control import DualState, update_lambda
from .envs import VectorEnv, default_config, reset, step_vectorized
from .objective import ClippedLoss, R2vpoLoss, compute_ratios
from .policy_net import GaussianPolicyHead, Mlp
from .replay import ReplayBuffer

CHECKPOINT_VERSION = 1

# SeedSequence stream tags: every random consumer gets its own child stream
# of the run seed, so adding or reordering one never shifts the others.
_STREAM_ENV = 0
_STREAM_POLICY_INIT = 1
_STREAM_VALUE_INIT = 2
_STREAM_ACTIONS = 3
_STREAM_SHUFFLE = 4
_STREAM_REPLAY = 5
_STREAM_EVAL = 6

METRICS_CSV_HEADER = (
    "iteration,env_steps,mean_eval_return,policy_loss,value_loss,"
    "ratio_second_moment,lambda,grad_norm,clamp_events,frac_ratio_outside"
)

RATIO_BAND = (0.5, 2.0)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    """Adam on a flat parameter vector (minimization convention)."""

    lr: float
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    t: int = field(init=False, default=0)

    def __post_init__(self):
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if params.shape != (self.size,) or grad.shape != (self.size,):
            raise ValueError(f"expected flat vectors of size {self.size}")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(grad: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """(possibly rescaled gradient, pre-clip global L2 norm)."""
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch's cover of range(n): a shuffled partition into chunks of
    batch_size (last chunk may be short), so every index appears exactly once."""
    perm = rng.permutation(n)
    return [perm[lo : lo + batch_size] for lo in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# metrics


@dataclass
class IterationMetrics:
    iteration: int
    env_steps: int
    mean_eval_return: float
    policy_loss: float
    value_loss: float
    ratio_second_moment: float
    lam: float
    grad_norm: float
    clamp_events: int
    frac_ratio_outside: float
    staleness: dict | None = None  # off-policy only: {age: sample count}

    def csv_row(self) -> str:
        return ",".join(
            [
                str(self.iteration),
                str(self.env_steps),
                repr(self.mean_eval_return),
                repr(self.policy_loss),
                repr(self.value_loss),
                repr(self.ratio_second_moment),
                repr(self.lam),
                repr(self.grad_norm),
                str(self.clamp_events),
                repr(self.frac_ratio_outside),
            ]
        )


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_row() + "\n")


def export_ratio_diagnostics(ratios, advantages, staleness, path) -> None:
    """CSV of per-sample (ratio, advantage, staleness) triples."""
    ratios = np.asarray(ratios, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    staleness = np.asarray(staleness)
    if ratios.size == 0:
        raise ValueError("no ratio samples to export")
    if ratios.shape != advantages.shape or ratios.shape != staleness.shape:
        raise ValueError("ratio, advantage, and staleness columns must align")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ratio,advantage,staleness\n")
        for r, a, s in zip(ratios, advantages, staleness):
            fh.write(f"{float(r)!r},{float(a)!r},{int(s)}\n")


# ---------------------------------------------------------------------------
# rollout collection


def collect_rollouts(
    policy: GaussianPolicyHead,
    value_net: Mlp,
    env: VectorEnv,
    stats: RunningStats,
    cfg: TrainerConfig,
    action_rng: np.random.Generator,
) -> TransitionBatch:
    """rollout_length vectorized steps; returns the flattened batch.

    Observations are standardized by the running stats (updated on the fly)
    before the policy or the value net sees them; stored states are these
    standardized vectors.  Rewards are scaled before advantage estimation.
    Behavior log-probabilities are recorded at sampling time.
    """
    T, N = cfg.rollout_length, env.num_envs
    obs_dim = env.cfg.obs_dim
    act_dim = env.cfg.action_dim
    states = np.empty((T, N, obs_dim))
    actions = np.empty((T, N, act_dim))
    rewards = np.empty((T, N))
    dones = np.empty((T, N))
    values = np.empty((T, N))
    logp_off = np.empty((T, N))

    raw_obs = env.observations()
    for t in range(T):
        finite_rows = np.isfinite(raw_obs).all(axis=1)
        if not finite_rows.all():
            bad = int(np.flatnonzero(~finite_rows)[0])
            raise FloatingPointError(f"non-finite observation from environment {bad}")
        norm_obs = update_and_normalize_obs(stats, raw_obs)
        act, logp = policy.sample(norm_obs, action_rng)
        states[t] = norm_obs
        actions[t] = act
        values[t] = value_net.forward_value(norm_obs)
        logp_off[t] = logp
        raw_obs, rewards[t], dones[t] = env.step(act)

    bootstrap = value_net.forward_value(stats.normalize(raw_obs))
    scaled = scale_rewards(rewards, cfg.adv)
    advantages, returns = gae(scaled, values, bootstrap, dones, cfg.adv)

    flat_adv = advantages.reshape(-1)
    if cfg.adv.normalize_advantages:
        flat_adv = normalize_advantages(flat_adv)
    return TransitionBatch(
        states=states.reshape(T * N, obs_dim),
        actions=actions.reshape(T * N, act_dim),
        rewards=scaled.reshape(-1),
        dones=dones.reshape(-1),
        values=values.reshape(-1),
        log_prob_off=logp_off.reshape(-1),
        advantages=flat_adv,
        returns=returns.reshape(-1),
    )


# ---------------------------------------------------------------------------
# gradient steps


def _policy_loss_for(cfg: TrainerConfig, dual: DualState, logp_off, advantages):
    if cfg.algo.uses_dual:
        return R2vpoLoss(logp_off, advantages, dual)
    return ClippedLoss(logp_off, advantages, cfg.clip)


def _gaussian_entropy(policy: GaussianPolicyHead) -> float:
    return float(np.sum(policy.log_std) + 0.5 * policy.action_dim * (1.0 + math.log(2.0 * math.pi)))


@dataclass
class _StepStats:
    objective: float
    grad_norm: float
    second_moment: float
    clamp_events: int
    n_outside: int
    n: int


def _abort_stats(tag: str, mb: TransitionBatch, extra: str = "") -> str:
    adv = mb.advantages
    return (
        f"non-finite {tag} on a minibatch of {len(mb)}: "
        f"adv mean {adv.mean():.6g} min {adv.min():.6g} max {adv.max():.6g}"
    ) + extra


def policy_gradient_step(
    policy: GaussianPolicyHead,
    mb: TransitionBatch,
    dual: DualState,
    cfg: TrainerConfig,
    adam: Adam,
) -> _StepStats:
    loss = _policy_loss_for(cfg, dual, mb.log_prob_off, mb.advantages)
    logp, cache = policy.log_prob_cached(mb.states, mb.actions)
    objective, dlogp = loss.value_and_grad(logp)
    ratios = compute_ratios(logp, mb.log_prob_off)
    if not math.isfinite(objective):
        raise RuntimeError(
            _abort_stats("policy objective", mb, f", ratio max {ratios.ratio.max():.6g}")
        )
    grad = policy.backward_log_prob(cache, dlogp)
    if cfg.entropy_coef > 0.0:
        objective += cfg.entropy_coef * _gaussian_entropy(policy)
        grad[-policy.action_dim :] += cfg.entropy_coef
    clipped, norm = clip_global_norm(grad, cfg.max_grad_norm)
    policy.set_flat(adam.step(policy.get_flat(), -clipped))
    policy.clamp_log_std()
    rho = ratios.ratio
    outside = int(np.count_nonzero((rho <= RATIO_BAND[0]) | (rho >= RATIO_BAND[1])))
    second = float(np.mean((rho - 1.0) ** 2))
    return _StepStats(objective, norm, second, ratios.clamp_events, outside, rho.size)


def value_gradient_step(value_net: Mlp, mb: TransitionBatch, cfg: TrainerConfig, adam: Adam) -> float:
    out, cache = value_net.forward_cached(mb.states)
    diff = out[:, 0] - mb.returns
    vloss = 0.5 * float(np.mean(diff**2))
    if not math.isfinite(vloss):
        raise RuntimeError(_abort_stats("value loss", mb))
    grad = value_net.backward_from_output(cache, (diff / diff.size)[:, None])
    clipped, _ = clip_global_norm(grad, cfg.max_grad_norm)
    value_net.set_flat(adam.step(value_net.get_flat(), clipped))
    return vloss


@dataclass
class _IterationAccumulator:
    """Sample-weighted tallies across every minibatch pass of one iteration."""

    objective_sum: float = 0.0
    vloss_sum: float = 0.0
    grad_norm_sum: float = 0.0
    second_sum: float = 0.0
    clamp_events: int = 0
    outside: int = 0
    samples: int = 0
    steps: int = 0

    def add(self, stats: _StepStats, vloss: float) -> None:
        self.objective_sum += stats.objective * stats.n
        self.vloss_sum += vloss * stats.n
        self.grad_norm_sum += stats.grad_norm
        self.second_sum += stats.second_moment * stats.n
        self.clamp_events += stats.clamp_events
        self.outside += stats.n_outside
        self.samples += stats.n
        self.steps += 1

    def metrics_fields(self) -> tuple[float, float, float, float, float]:
        n, k = max(self.samples, 1), max(self.steps, 1)
        return (
            -self.objective_sum / n,  # report the maximized objective as a loss
            self.vloss_sum / n,
            self.second_sum / n,
            self.grad_norm_sum / k,
            self.outside / n,
        )


def optimize_epochs(
    batch: TransitionBatch,
    policy: GaussianPolicyHead,
    value_net: Mlp,
    dual: DualState,
    cfg: TrainerConfig,
    shuffle_rng: np.random.Generator,
    policy_adam: Adam,
    value_adam: Adam,
) -> _IterationAccumulator:
    """cfg.epochs shuffled passes over the batch; one dual update per epoch."""
    acc = _IterationAccumulator()
    for _ in range(cfg.epochs):
        epoch_second = 0.0
        epoch_n = 0
        for idx in minibatch_indices(len(batch), cfg.batch_size, shuffle_rng):
            mb = batch.take(idx)
            stats = policy_gradient_step(policy, mb, dual, cfg, policy_adam)
            vloss = value_gradient_step(value_net, mb, cfg, value_adam)
            acc.add(stats, vloss)
            epoch_second += stats.second_moment * stats.n
            epoch_n += stats.n
        if cfg.algo.uses_dual:
            update_lambda(dual, epoch_second / epoch_n)
    return acc


# ---------------------------------------------------------------------------
# evaluation


def evaluate(policy: GaussianPolicyHead, stats: RunningStats, cfg: TrainerConfig, eval_index: int) -> float:
    """Mean undiscounted return of eval_episodes deterministic episodes.

    Actions are the Gaussian means; rewards are raw (unscaled); observation
    stats are frozen.  Episode seeds depend only on (seed, eval_index,
    episode), so repeated runs evaluate on identical initial states.
    """
    env_cfg = default_config(cfg.env)
    states, obs = [], []
    for ep in range(cfg.eval_episodes):
        s, o = reset(env_cfg, np.random.SeedSequence((cfg.seed, _STREAM_EVAL, eval_index, ep)))
        states.append(s)
        obs.append(o)
    obs = np.stack(obs)
    returns = np.zeros(cfg.eval_episodes)
    for _ in range(env_cfg.episode_length):
        actions = policy.mean_action(stats.normalize(obs))
        results = step_vectorized(states, actions, env_cfg)
        states = [r[0] for r in results]
        obs = np.stack([r[1] for r in results])
        returns += np.array([r[2] for r in results])
    return float(returns.mean())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, policy, value_net, stats, dual, cfg: TrainerConfig, iteration: int) -> None:
    np.savez(
        path,
        version=np.array(CHECKPOINT_VERSION),
        algo=np.array(cfg.algo.value),
        env=np.array(cfg.env.value),
        seed=np.array(cfg.seed),
        iteration=np.array(iteration),
        hidden_sizes=np.array(cfg.hidden_sizes, dtype=np.int64),
        obs_dim=np.array(policy.mean_net.layer_sizes[0]),
        action_dim=np.array(policy.action_dim),
        policy_mean_flat=policy.mean_net.get_flat(),
        policy_log_std=policy.log_std.copy(),
        value_flat=value_net.get_flat(),
        obs_count=np.array(stats.count),
        obs_mean=stats.mean.copy(),
        obs_m2=stats.m2.copy(),
        lam=np.array(dual.lam),
    )


def load_checkpoint(path):
    """-> (policy, value_net, stats, info dict with env/algo/seed/iteration/lam)."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hidden = tuple(int(h) for h in data["hidden_sizes"])
        obs_dim = int(data["obs_dim"])
        action_dim = int(data["action_dim"])
        rng = np.random.default_rng(0)  # layout only; weights are overwritten
        policy = GaussianPolicyHead.initialize(obs_dim, action_dim, hidden, rng)
        policy.mean_net.set_flat(data["policy_mean_flat"])
        policy.log_std[:] = data["policy_log_std"]
        value_net = Mlp.initialize([obs_dim, *hidden, 1], rng)
        value_net.set_flat(data["value_flat"])
        stats = RunningStats(float(data["obs_count"]), data["obs_mean"].copy(), data["obs_m2"].copy())
        info = {
            "env": str(data["env"]),
            "algo": str(data["algo"]),
            "seed": int(data["seed"]),
            "iteration": int(data["iteration"]),
            "lam": float(data["lam"]),
        }
    return policy, value_net, stats, info


# ---------------------------------------------------------------------------
# run loops


@dataclass
class _RunState:
    cfg: TrainerConfig
    env: VectorEnv
    policy: GaussianPolicyHead
    value_net: Mlp
    stats: RunningStats
    dual: DualState
    policy_adam: Adam
    value_adam: Adam
    action_rng: np.random.Generator
    shuffle_rng: np.random.Generator
    replay_rng: np.random.Generator


def _setup(cfg: TrainerConfig) -> _RunState:
    env_cfg = default_config(cfg.env)
    seeds = [np.random.SeedSequence((cfg.seed, _STREAM_ENV, i)) for i in range(cfg.parallel_envs)]
    env = VectorEnv(env_cfg, seeds)
    policy = GaussianPolicyHead.initialize(
        env_cfg.obs_dim,
        env_cfg.action_dim,
        cfg.hidden_sizes,
        np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_POLICY_INIT))),
    )
    value_net = Mlp.initialize(
        [env_cfg.obs_dim, *cfg.hidden_sizes, 1],
        np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_VALUE_INIT))),
    )
    return _RunState(
        cfg=cfg,
        env=env,
        policy=policy,
        value_net=value_net,
        stats=RunningStats.zeros(env_cfg.obs_dim),
        dual=cfg.initial_dual_state(),
        policy_adam=Adam(cfg.learning_rate, policy.n_params),
        value_adam=Adam(cfg.learning_rate, value_net.n_params),
        action_rng=np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_ACTIONS))),
        shuffle_rng=np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_SHUFFLE))),
        replay_rng=np.random.default_rng(np.random.SeedSequence((cfg.seed, _STREAM_REPLAY))),
    )


def _n_iterations(cfg: TrainerConfig) -> int:
    return -(-cfg.total_env_steps // cfg.steps_per_iteration)


class _Artifacts:
    """Optional file outputs for a run directory."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    def checkpoint(self, rs: _RunState, iteration: int, final: bool) -> None:
        if self.out_dir is None:
            return
        name = "checkpoint_final.npz" if final else f"checkpoint_{iteration:06d}.npz"
        save_checkpoint(
            os.path.join(self.out_dir, name),
            rs.policy,
            rs.value_net,
            rs.stats,
            rs.dual,
            rs.cfg,
            iteration,
        )

    def finish(self, rows, last_batch, rs: _RunState, staleness=None) -> None:
        if self.out_dir is None:
            return
        write_metrics_csv(rows, os.path.join(self.out_dir, "metrics.csv"))
        logp = rs.policy.log_prob(last_batch.states, last_batch.actions)
        ratios = compute_ratios(logp, last_batch.log_prob_off)
        ages = staleness if staleness is not None else np.zeros(len(last_batch), dtype=int)
        export_ratio_diagnostics(
            ratios.ratio,
            last_batch.advantages,
            ages,
            os.path.join(self.out_dir, "ratio_diagnostics.csv"),
        )


def _should_eval(cfg: TrainerConfig, iteration: int, n_iters: int) -> bool:
    return iteration == 1 or iteration == n_iters or iteration % cfg.eval_every == 0


def _set_iteration_lr(rs: _RunState, iteration: int, n_iters: int) -> None:
    """Hold-then-decay schedule: full rate for the first half of the run,
    then quadratic decay to zero, when enabled."""
    lr = rs.cfg.learning_rate
    if rs.cfg.lr_anneal:
        progress = (iteration - 1) / n_iters
        lr *= min(1.0, (2.0 * (1.0 - progress)) ** 2)
    rs.policy_adam.lr = lr
    rs.value_adam.lr = lr


def run_on_policy(cfg: TrainerConfig, out_dir=None) -> list[IterationMetrics]:
    """collect -> optimize_epochs -> evaluate -> log, until total_env_steps."""
    rs = _setup(cfg)
    artifacts = _Artifacts(out_dir)
    n_iters = _n_iterations(cfg)
    rows: list[IterationMetrics] = []
    env_steps = 0
    eval_return = math.nan
    batch = None
    for it in range(1, n_iters + 1):
        batch = collect_rollouts(rs.policy, rs.value_net, rs.env, rs.stats, cfg, rs.action_rng)
        env_steps += len(batch)
        _set_iteration_lr(rs, it, n_iters)
        acc = optimize_epochs(
            batch, rs.policy, rs.value_net, rs.dual, cfg, rs.shuffle_rng, rs.policy_adam, rs.value_adam
        )
        if _should_eval(cfg, it, n_iters):
            eval_return = evaluate(rs.policy, rs.stats, cfg, it)
            artifacts.checkpoint(rs, it, final=it == n_iters)
        ploss, vloss, second, gnorm, frac = acc.metrics_fields()
        lam = rs.dual.lam if cfg.algo.uses_dual else 0.0
        rows.append(
            IterationMetrics(
                it, env_steps, eval_return, ploss, vloss, second, lam, gnorm, acc.clamp_events, frac
            )
        )
    artifacts.finish(rows, batch, rs)
    return rows


def run_off_policy(cfg: TrainerConfig, out_dir=None) -> list[IterationMetrics]:
    """Replay-buffer loop: push each rollout, then
    utd_ratio * epochs * minibatches sampled gradient steps, with a dual
    update after every step.  The value net regresses the stored (frozen)
    return targets of whatever samples the buffer serves."""
    rs = _setup(cfg)
    artifacts = _Artifacts(out_dir)
    buffer = ReplayBuffer(cfg.replay)
    n_iters = _n_iterations(cfg)
    gradient_steps = cfg.replay.utd_ratio * cfg.epochs * cfg.minibatches_per_epoch
    rows: list[IterationMetrics] = []
    env_steps = 0
    eval_return = math.nan
    last_staleness = None
    for it in range(1, n_iters + 1):
        batch = collect_rollouts(rs.policy, rs.value_net, rs.env, rs.stats, cfg, rs.action_rng)
        env_steps += len(batch)
        buffer.push_iteration(it, batch)
        _set_iteration_lr(rs, it, n_iters)
        acc = _IterationAccumulator()
        for _ in range(gradient_steps):
            mb, last_staleness = buffer.sample_minibatch(cfg.batch_size, rs.replay_rng, it)
            stats = policy_gradient_step(rs.policy, mb, rs.dual, cfg, rs.policy_adam)
            vloss = value_gradient_step(rs.value_net, mb, cfg, rs.value_adam)
            acc.add(stats, vloss)
            if cfg.algo.uses_dual:
                update_lambda(rs.dual, stats.second_moment)
        if _should_eval(cfg, it, n_iters):
            eval_return = evaluate(rs.policy, rs.stats, cfg, it)
            artifacts.checkpoint(rs, it, final=it == n_iters)
        ploss, vloss, second, gnorm, frac = acc.metrics_fields()
        lam = rs.dual.lam if cfg.algo.uses_dual else 0.0
        rows.append(
            IterationMetrics(
                it,
                env_steps,
                eval_return,
                ploss,
                vloss,
                second,
                lam,
                gnorm,
                acc.clamp_events,
                frac,
                staleness=buffer.staleness_histogram(it),
            )
        )
    # diagnostics cover the full remaining buffer with exact per-entry ages
    entries = buffer.entries()
    full = TransitionBatch.concat([e.batch for e in entries])
    ages = np.concatenate([np.full(len(e.batch), n_iters - e.iteration_id, dtype=int) for e in entries])
    artifacts.finish(rows, full, rs, staleness=ages)
    return rows


def run(cfg: TrainerConfig, out_dir=None) -> list[IterationMetrics]:
    """Dispatch on the algorithm's sampling regime."""
    if cfg.algo is Algo.R2VPO_OFF:
        return run_off_policy(cfg, out_dir)
    return run_on_policy(cfg, out_dir)
