"""Surrogate objectives on importance ratios, and the clipping-error bound.

All objectives are written as quantities to MAXIMIZE.  Ratios are computed
from per-sample log-probabilities with the log-ratio clamped to +-30 before
exponentiation; clamp events are counted, and clamped samples carry zero
gradient (their ratio no longer responds to the parameters).

The loss-definition classes at the bottom plug into policy_net.backward():
each maps per-sample new log-probabilities to (scalar objective, d/dlogp),
using d(rho)/d(logp) = rho on unclamped samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dual_control import DualState

LOG_RATIO_CLAMP = 30.0


@dataclass
class RatioBatch:
    """Per-sample importance ratios with their (clamped) log form."""

    log_ratio: np.ndarray
    ratio: np.ndarray
    clamp_events: int


def compute_ratios(logp_new, logp_off) -> RatioBatch:
    """rho = exp(clamp(logp_new - logp_off, +-30)), counting clamps."""
    logp_new = np.asarray(logp_new, dtype=float)
    logp_off = np.asarray(logp_off, dtype=float)
    if logp_new.shape != logp_off.shape or logp_new.ndim != 1 or logp_new.size == 0:
        raise ValueError(
            f"expected matching nonempty 1-D log-prob vectors, got "
            f"{logp_new.shape} and {logp_off.shape}"
        )
    if not (np.all(np.isfinite(logp_new)) and np.all(np.isfinite(logp_off))):
        raise ValueError("log-probabilities must be finite")
    raw = logp_new - logp_off
    clamped = np.clip(raw, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    clamp_events = int(np.count_nonzero(raw != clamped))
    return RatioBatch(log_ratio=clamped, ratio=np.exp(clamped), clamp_events=clamp_events)


@dataclass(frozen=True)
class ClipConfig:
    """Asymmetric trust band [1 - eps_low, 1 + eps_high] for ratio clipping."""

    eps_low: float = 0.2
    eps_high: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.eps_low < 1.0:
            raise ValueError(f"eps_low must be in (0, 1), got {self.eps_low!r}")
        if not self.eps_high > 0.0:
            raise ValueError(f"eps_high must be > 0, got {self.eps_high!r}")


def _check_pair(ratios: RatioBatch, advantages) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=float)
    if advantages.shape != ratios.ratio.shape:
        raise ValueError(
            f"advantages shape {advantages.shape} does not match ratios {ratios.ratio.shape}"
        )
    if not np.all(np.isfinite(advantages)):
        raise ValueError("advantages must be finite")
    return advantages


def unclipped_objective(ratios: RatioBatch, advantages) -> float:
    """mean(rho * A): the plain importance-weighted surrogate."""
    advantages = _check_pair(ratios, advantages)
    return float(np.mean(ratios.ratio * advantages))


def _clip_terms(rho, advantages, cfg: ClipConfig):
    clipped_rho = np.clip(rho, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high)
    return rho * advantages, clipped_rho * advantages


def clipped_objective(ratios: RatioBatch, advantages, cfg: ClipConfig) -> float:
    """mean(min(rho * A, clip(rho) * A)): the pessimistic clipped surrogate."""
    advantages = _check_pair(ratios, advantages)
    unclipped, clipped = _clip_terms(ratios.ratio, advantages, cfg)
    return float(np.mean(np.minimum(unclipped, clipped)))


def r2vpo_objective(ratios: RatioBatch, advantages, dual: DualState) -> float:
    """mean(rho * A - lam * ((rho - 1)^2 - delta)): penalized surrogate."""
    advantages = _check_pair(ratios, advantages)
    if dual.lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {dual.lam!r}")
    rho = ratios.ratio
    return float(np.mean(rho * advantages - dual.lam * ((rho - 1.0) ** 2 - dual.delta)))


def ratio_second_moment(ratios: RatioBatch) -> float:
    """mean((rho - 1)^2), the statistic both the penalty and the dual watch."""
    if ratios.ratio.size == 0:
        raise ValueError("empty ratio batch")
    return float(np.mean((ratios.ratio - 1.0) ** 2))


@dataclass(frozen=True)
class ClipErrorReport:
    """One unclipped-vs-clipped comparison against the second-moment bound."""

    j_unc: float
    j_clip: float
    gap: float
    a_max: float
    eps: float
    second_moment: float
    bound: float
    holds: bool


BOUND_CSV_HEADER = "j_unc,j_clip,gap,a_max,eps,second_moment,bound,holds"


def check_clip_bound(ratios: RatioBatch, advantages, cfg: ClipConfig) -> ClipErrorReport:
    """Verify |J_unc - J_clip| <= (max|A| / eps) * mean((rho - 1)^2).

    Requires a symmetric band (eps_low == eps_high).
    """
    if cfg.eps_low != cfg.eps_high:
        raise ValueError(
            f"bound check needs symmetric clipping, got eps_low={cfg.eps_low!r}, "
            f"eps_high={cfg.eps_high!r}"
        )
    advantages = _check_pair(ratios, advantages)
    eps = cfg.eps_low
    j_unc = unclipped_objective(ratios, advantages)
    j_clip = clipped_objective(ratios, advantages, cfg)
    gap = abs(j_unc - j_clip)
    a_max = float(np.max(np.abs(advantages)))
    sm = ratio_second_moment(ratios)
    bound = a_max / eps * sm
    return ClipErrorReport(
        j_unc=j_unc,
        j_clip=j_clip,
        gap=gap,
        a_max=a_max,
        eps=eps,
        second_moment=sm,
        bound=bound,
        holds=bool(gap <= bound),
    )


def write_bound_csv(reports, path) -> None:
    lines = [BOUND_CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.j_unc!r},{r.j_clip!r},{r.gap!r},{r.a_max!r},{r.eps!r},"
            f"{r.second_moment!r},{r.bound!r},{'true' if r.holds else 'false'}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def run_bound_trials(n_trials: int, seed: int) -> tuple[int, list[ClipErrorReport]]:
    """Randomized stress of the clipping-error bound.

    Each trial draws a batch of lognormal ratios (log-std in [0.01, 0.5]),
    advantages uniform on [-2, 2], and a symmetric eps from {0.1, 0.2, 0.3}.
    Returns (violation count, all reports).
    """
    rng = np.random.default_rng(seed)
    reports = []
    violations = 0
    for _ in range(int(n_trials)):
        n = int(rng.integers(8, 257))
        sigma = rng.uniform(0.01, 0.5)
        log_ratio = rng.normal(0.0, sigma, size=n)
        ratios = RatioBatch(log_ratio=log_ratio, ratio=np.exp(log_ratio), clamp_events=0)
        advantages = rng.uniform(-2.0, 2.0, size=n)
        eps = float(rng.choice([0.1, 0.2, 0.3]))
        report = check_clip_bound(ratios, advantages, ClipConfig(eps, eps))
        reports.append(report)
        if not report.holds:
            violations += 1
    return violations, reports


class _RatioLoss:
    """Shared plumbing mapping logp_new -> (objective, d(objective)/d(logp))."""

    def __init__(self, logp_off, advantages):
        self.logp_off = np.asarray(logp_off, dtype=float)
        self.advantages = np.asarray(advantages, dtype=float)
        if self.logp_off.shape != self.advantages.shape or self.logp_off.ndim != 1:
            raise ValueError(
                f"logp_off {self.logp_off.shape} and advantages "
                f"{self.advantages.shape} must be matching 1-D vectors"
            )

    def value_and_grad(self, logp_new):
        logp_new = np.asarray(logp_new, dtype=float)
        ratios = compute_ratios(logp_new, self.logp_off)
        value, dvalue_drho = self._value_and_drho(ratios.ratio)
        # d(rho)/d(logp) = rho, except clamped samples which stop responding.
        alive = np.abs(logp_new - self.logp_off) <= LOG_RATIO_CLAMP
        return value, dvalue_drho * ratios.ratio * alive


class UnclippedLoss(_RatioLoss):
    """mean(rho * A)."""

    def _value_and_drho(self, rho):
        value = float(np.mean(rho * self.advantages))
        return value, self.advantages / rho.size


class R2vpoLoss(_RatioLoss):
    """mean(rho * A - lam ((rho - 1)^2 - delta)).

    d/d(rho) is (A - 2 lam (rho - 1)) / N: the advantage attenuated by how
    far the ratio already drifted, vanishing at rho = 1 + A / (2 lam).
    """

    def __init__(self, logp_off, advantages, dual: DualState):
        super().__init__(logp_off, advantages)
        if dual.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {dual.lam!r}")
        self.dual = dual

    def _value_and_drho(self, rho):
        lam, delta = self.dual.lam, self.dual.delta
        value = float(np.mean(rho * self.advantages - lam * ((rho - 1.0) ** 2 - delta)))
        drho = (self.advantages - 2.0 * lam * (rho - 1.0)) / rho.size
        return value, drho


class ClippedLoss(_RatioLoss):
    """mean(min(rho * A, clip(rho) * A)); ties follow the unclipped branch."""

    def __init__(self, logp_off, advantages, cfg: ClipConfig):
        super().__init__(logp_off, advantages)
        self.cfg = cfg

    def _value_and_drho(self, rho):
        unclipped, clipped = _clip_terms(rho, self.advantages, self.cfg)
        value = float(np.mean(np.minimum(unclipped, clipped)))
        # When the clipped branch is strictly lower the ratio sits outside
        # the band, where clip(rho) is flat — so its derivative is zero.
        drho = np.where(unclipped <= clipped, self.advantages, 0.0) / rho.size
        return value, drho
