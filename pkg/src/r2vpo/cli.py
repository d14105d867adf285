"""Command-line interface: training runs, evaluation, and verification suites.

Subcommands
-----------
train             run one training configuration, writing metrics/checkpoints
eval              roll deterministic episodes from a saved checkpoint
verify-divergence write the quadratic-approximation error sweeps (6 CSVs)
gradcheck         compare analytic policy gradients against finite differences
check-bound       randomized trials of the clipping-error bound

Exit codes: 0 on success, 1 when a verification check fails, 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .config import Algo, ConfigError, TrainerConfig, dump_config, load_config, load_config_text
from .divergence import (
    DivergenceGenerator,
    GaussianMeanShift,
    approximation_error_sweep,
    write_sweep_csv,
)
from .dual_control import DualMode, initial_state
from .envs import EnvKind
from .objective import R2vpoLoss, run_bound_trials, write_bound_csv
from .policy_net import GaussianPolicyHead, backward, finite_diff_gradient, gradient_discrepancy
from .trainer import evaluate, load_checkpoint, run

MANIFEST_CONFIG_MARKER = "# config"


# ---------------------------------------------------------------------------
# manifest


def write_manifest(path, cfg: TrainerConfig, out_dir) -> None:
    """Resolved-run record; the section after the marker is a loadable config."""
    started = datetime.now(timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# run manifest\n")
        fh.write(f"version={__version__}\n")
        fh.write(f"seed={cfg.seed}\n")
        fh.write(f"started={started}\n")
        fh.write(f"out_dir={out_dir}\n")
        fh.write(MANIFEST_CONFIG_MARKER + "\n")
        fh.write(dump_config(cfg))


def read_manifest_config(path) -> TrainerConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    marker = text.find(MANIFEST_CONFIG_MARKER)
    if marker < 0:
        raise ConfigError(f"{path} has no config section")
    return load_config_text(text[marker + len(MANIFEST_CONFIG_MARKER) :])


# ---------------------------------------------------------------------------
# verification runners


def run_divergence_sweeps(out_dir, n_scales: int = 25) -> list[str]:
    """One CSV per generator: exact divergence vs. its quadratic surrogate
    along a Gaussian mean-shift path.  Returns the written paths."""
    family = GaussianMeanShift()
    scales = np.geomspace(0.01, 0.6, n_scales)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for gen in DivergenceGenerator:
        rows = approximation_error_sweep(gen, family, scales)
        path = os.path.join(out_dir, f"{gen.value}.csv")
        write_sweep_csv(rows, path)
        paths.append(path)
    return paths


def check_divergence_sweeps(out_dir) -> tuple[int, str]:
    """Write the sweeps and test the small-shift regime: relative error must
    stay within 5% wherever the ratio variance is at most 1e-2."""
    paths = run_divergence_sweeps(out_dir)
    family = GaussianMeanShift()
    scales = np.geomspace(0.01, 0.6, 25)
    worst = (0.0, None)
    for gen in DivergenceGenerator:
        for row in approximation_error_sweep(gen, family, scales):
            if row.ratio_variance <= 1e-2 and row.relative_error > worst[0]:
                worst = (row.relative_error, gen)
    if worst[0] > 0.05:
        return 1, f"FAIL: {worst[1].value} relative error {worst[0]:.3%} above 5% in the small-shift regime"
    return 0, f"wrote {len(paths)} sweeps to {out_dir}; worst small-shift relative error {worst[0]:.3e}"


def run_gradcheck_suite(n_nets: int = 100, seed: int = 0, h: float = 1e-5) -> tuple[float, float]:
    """(max relative gap, max absolute gap) between analytic and central
    finite-difference gradients of the variance-penalized objective, across
    randomly shaped Gaussian policies and batches."""
    max_rel = 0.0
    max_abs = 0.0
    for trial in range(n_nets):
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        obs_dim = int(rng.integers(2, 9))
        action_dim = int(rng.integers(1, 4))
        hidden = tuple(int(rng.integers(4, 17)) for _ in range(int(rng.integers(1, 3))))
        n = int(rng.integers(3, 11))
        policy = GaussianPolicyHead.initialize(obs_dim, action_dim, hidden, rng)
        policy.log_std[:] = rng.uniform(-1.0, 0.5, size=action_dim)
        states = rng.standard_normal((n, obs_dim))
        actions, logp = policy.sample(states, rng)
        logp_off = logp + rng.normal(0.0, 0.3, size=n)
        advantages = rng.standard_normal(n)
        dual = initial_state(DualMode.FIXED, float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 0.01)), 1e-3)
        loss = R2vpoLoss(logp_off, advantages, dual)
        analytic = backward(policy, loss, (states, actions))
        numeric = finite_diff_gradient(policy, loss, (states, actions), h=h)
        rel, abs_gap = gradient_discrepancy(analytic, numeric)
        max_rel = max(max_rel, rel)
        max_abs = max(max_abs, abs_gap)
    return max_rel, max_abs


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_train(args) -> int:
    overrides = {"algo": Algo(args.algo), "env": EnvKind(args.env), "seed": args.seed}
    try:
        if args.config is not None:
            cfg = load_config(args.config, overrides=overrides, preset=args.preset)
        else:
            cfg = load_config_text("", overrides=overrides, preset=args.preset)
    except FileNotFoundError:
        print(f"config error: no such file: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    write_manifest(os.path.join(args.out, "manifest.txt"), cfg, args.out)
    rows = run(cfg, out_dir=args.out)
    final = rows[-1]
    print(
        f"{cfg.algo.value} on {cfg.env.value}: {final.env_steps} env steps, "
        f"final mean eval return {final.mean_eval_return!r}"
    )
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    try:
        policy, _, stats, info = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        print(f"error: no such checkpoint: {args.checkpoint}", file=sys.stderr)
        return 2
    cfg = TrainerConfig(
        env=EnvKind(info["env"]),
        seed=info["seed"],
        eval_episodes=args.episodes,
    )
    mean_return = evaluate(policy, stats, cfg, eval_index=info["iteration"])
    print(
        f"checkpoint {args.checkpoint} (iteration {info['iteration']}): "
        f"mean return {mean_return!r} over {args.episodes} episodes"
    )
    return 0


def _cmd_verify_divergence(args) -> int:
    code, message = check_divergence_sweeps(args.out)
    print(message)
    return code


def _cmd_gradcheck(args) -> int:
    max_rel, max_abs = run_gradcheck_suite(n_nets=args.nets, seed=args.seed)
    print(f"gradcheck over {args.nets} networks: max relative gap {max_rel:.3e}, max absolute gap {max_abs:.3e}")
    if max_rel > args.tolerance:
        print(f"FAIL: relative gap above {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


def _cmd_check_bound(args) -> int:
    violations, reports = run_bound_trials(args.trials, args.seed)
    if args.out is not None:
        write_bound_csv(reports, args.out)
    print(f"checked {args.trials} randomized batches: {violations} bound violations")
    if violations:
        worst = min(reports, key=lambda r: r.bound - r.gap)
        print(f"FAIL: e.g. gap {worst.gap!r} exceeds bound {worst.bound!r}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="r2vpo",
        description="Variance-regularized policy optimization benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training configuration")
    train.add_argument("--algo", required=True, choices=[a.value for a in Algo])
    train.add_argument("--env", required=True, choices=[e.value for e in EnvKind])
    train.add_argument("--seed", required=True, type=int)
    train.add_argument("--out", required=True, help="output directory for artifacts")
    train.add_argument("--config", default=None, help="flat key=value config file")
    train.add_argument("--preset", default=None, choices=["desk", "paper"])
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint deterministically")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    ev.set_defaults(func=_cmd_eval)

    vd = sub.add_parser("verify-divergence", help="write approximation-error sweeps")
    vd.add_argument("--out", required=True, help="directory for the six CSVs")
    vd.set_defaults(func=_cmd_verify_divergence)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    gc.add_argument("--nets", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=_cmd_gradcheck)

    cb = sub.add_parser("check-bound", help="randomized clipping-error bound trials")
    cb.add_argument("--trials", type=int, default=10000)
    cb.add_argument("--seed", type=int, default=0)
    cb.add_argument("--out", default=None, help="optional CSV of per-trial reports")
    cb.set_defaults(func=_cmd_check_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
