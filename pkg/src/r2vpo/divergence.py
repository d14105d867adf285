"""f-divergence generators and the ratio-variance quadratic approximation.

Each generator f is convex on u > 0 with f(1) = 0 and induces the divergence
D_f(p || q) = E_q[f(p/q)].  When p stays close to q, a second-order expansion
around u = 1 collapses every D_f onto the same scalar statistic:

    D_f(p || q)  ≈  f''(1)/2 · E_q[(p/q - 1)^2],

i.e. the curvature constant times half the importance-ratio second moment.
This module evaluates both sides exactly (closed form, discrete sums, or
adaptive quadrature) so the approximation error can be measured rather than
assumed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate

LOG2 = math.log(2.0)


class SupportViolationError(ValueError):
    """p puts mass where q has none, so ratios p/q are undefined under q."""

    def __init__(self, index: int):
        self.index = int(index)
        super().__init__(
            f"p[{self.index}] > 0 but q[{self.index}] == 0; "
            "support(p) must be contained in support(q)"
        )


class DivergenceGenerator(enum.Enum):
    """Convex generator f (f(1) = 0) for D_f(p || q) = E_q[f(p/q)]."""

    REVERSE_KL = "reverse_kl"
    FORWARD_KL = "forward_kl"
    JENSEN_SHANNON = "jensen_shannon"
    HELLINGER = "hellinger"
    CHI_SQUARED = "chi_squared"
    ALPHA_HALF = "alpha_half"

    @property
    def description(self) -> str:
        return _DESCRIPTIONS[self]


_DESCRIPTIONS = {
    DivergenceGenerator.REVERSE_KL: "Reverse KL",
    DivergenceGenerator.FORWARD_KL: "Forward KL",
    DivergenceGenerator.JENSEN_SHANNON: "Jensen-Shannon",
    DivergenceGenerator.HELLINGER: "Squared Hellinger",
    DivergenceGenerator.CHI_SQUARED: "Pearson chi-squared",
    DivergenceGenerator.ALPHA_HALF: "Alpha divergence (alpha = 1/2)",
}

ALL_GENERATORS: tuple[DivergenceGenerator, ...] = tuple(DivergenceGenerator)

# Curvature f''(1); the quadratic approximation is f''(1)/2 * second moment.
SECOND_DERIVATIVE_AT_ONE = {
    DivergenceGenerator.REVERSE_KL: 1.0,
    DivergenceGenerator.FORWARD_KL: 1.0,
    DivergenceGenerator.JENSEN_SHANNON: 0.25,
    DivergenceGenerator.HELLINGER: 0.5,
    DivergenceGenerator.CHI_SQUARED: 2.0,
    DivergenceGenerator.ALPHA_HALF: 1.0,
}

# Continuous limit of f(u) as u -> 0+, used for p_i = 0 < q_i in discrete sums.
_F_AT_ZERO = {
    DivergenceGenerator.REVERSE_KL: 0.0,
    DivergenceGenerator.FORWARD_KL: math.inf,
    DivergenceGenerator.JENSEN_SHANNON: 0.5 * LOG2,
    DivergenceGenerator.HELLINGER: 1.0,
    DivergenceGenerator.CHI_SQUARED: 1.0,
    DivergenceGenerator.ALPHA_HALF: 4.0,
}


def _f(gen: DivergenceGenerator, u: np.ndarray) -> np.ndarray:
    if gen is DivergenceGenerator.REVERSE_KL:
        return u * np.log(u)
    if gen is DivergenceGenerator.FORWARD_KL:
        return -np.log(u)
    if gen is DivergenceGenerator.JENSEN_SHANNON:
        return 0.5 * u * np.log(u) - 0.5 * (u + 1.0) * np.log(0.5 * (u + 1.0))
    if gen is DivergenceGenerator.HELLINGER:
        return (np.sqrt(u) - 1.0) ** 2
    if gen is DivergenceGenerator.CHI_SQUARED:
        return (u - 1.0) ** 2
    if gen is DivergenceGenerator.ALPHA_HALF:
        return 4.0 * (1.0 - np.sqrt(u))
    raise ValueError(f"unknown generator {gen!r}")


def eval_generator(gen: DivergenceGenerator, u):
    """Evaluate f(u) for u > 0.  Accepts a scalar or an array."""
    arr = np.asarray(u, dtype=float)
    if arr.size == 0:
        raise ValueError("u is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError(f"{gen.value}: generator arguments must be finite and > 0")
    out = _f(gen, arr)
    return float(out) if np.ndim(u) == 0 else out


def second_derivative_at_one(gen: DivergenceGenerator) -> float:
    """Curvature f''(1) of the generator."""
    return SECOND_DERIVATIVE_AT_ONE[gen]


def _f_allowing_zero(gen: DivergenceGenerator, u: np.ndarray) -> np.ndarray:
    """f(u) for u >= 0, filling u == 0 with the continuous limit of f."""
    out = np.empty_like(u)
    zero = u == 0.0
    if zero.any():
        out[zero] = _F_AT_ZERO[gen]
    if (~zero).any():
        out[~zero] = _f(gen, u[~zero])
    return out


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector: 1-D, finite, nonnegative, sums to 1 within 1e-12."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _validate_probs("probs", self.probs))


def _validate_probs(name: str, probs) -> np.ndarray:
    arr = np.array(probs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} has a negative entry at index {int(np.argmin(arr))}")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"{name} sums to {total!r}, not 1 within 1e-12")
    arr.setflags(write=False)
    return arr


def _as_probs(name: str, dist) -> np.ndarray:
    if isinstance(dist, DiscreteDistribution):
        return dist.probs
    return _validate_probs(name, dist)


def _checked_ratios(p, q) -> tuple[np.ndarray, np.ndarray]:
    """Validate the pair and return (q_support, p/q on that support)."""
    p = _as_probs("p", p)
    q = _as_probs("q", q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: p has {p.shape}, q has {q.shape}")
    bad = np.nonzero((q == 0.0) & (p > 0.0))[0]
    if bad.size:
        raise SupportViolationError(int(bad[0]))
    mask = q > 0.0
    return q[mask], p[mask] / q[mask]


def exact_divergence_discrete(p, q, gen: DivergenceGenerator) -> float:
    """D_f(p || q) = sum_i q_i f(p_i / q_i) over the support of q."""
    qs, u = _checked_ratios(p, q)
    return float(np.sum(qs * _f_allowing_zero(gen, u)))


def ratio_variance_discrete(p, q) -> float:
    """Second moment E_q[(p/q - 1)^2] for finite distributions."""
    qs, u = _checked_ratios(p, q)
    return float(np.sum(qs * (u - 1.0) ** 2))


def quadratic_approximation(gen: DivergenceGenerator, ratio_variance: float) -> float:
    """Small-shift estimate f''(1)/2 * E_q[(p/q - 1)^2]."""
    if not np.isfinite(ratio_variance) or ratio_variance < 0.0:
        raise ValueError(f"ratio_variance must be finite and >= 0, got {ratio_variance!r}")
    return 0.5 * SECOND_DERIVATIVE_AT_ONE[gen] * float(ratio_variance)


class GaussianMeanShift:
    """Family p = N(mu, 1) against q = N(0, 1), indexed by the shift mu.

    Both KL directions and the ratio second moment have closed forms here;
    the remaining generators are integrated numerically over [-12, 12]
    (extended by the shift) with absolute tolerance well under 1e-10.
    """

    def ratio_variance(self, mu: float) -> float:
        # E_q[(p/q)^2] = exp(mu^2), so the second moment is expm1(mu^2).
        return float(np.expm1(mu * mu))

    def exact(self, gen: DivergenceGenerator, mu: float) -> float:
        if gen in (DivergenceGenerator.REVERSE_KL, DivergenceGenerator.FORWARD_KL):
            return 0.5 * mu * mu
        return self._quadrature(gen, mu)

    @staticmethod
    def _quadrature(gen: DivergenceGenerator, mu: float) -> float:
        inv_sqrt_2pi = 1.0 / math.sqrt(2.0 * math.pi)

        def integrand(x: float) -> float:
            log_ratio = mu * x - 0.5 * mu * mu
            q = inv_sqrt_2pi * math.exp(-0.5 * x * x)
            return q * float(_f(gen, np.asarray(math.exp(log_ratio))))

        lo = -12.0 + min(0.0, mu)
        hi = 12.0 + max(0.0, mu)
        value, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return float(value)


@dataclass(frozen=True)
class DiscretePerturbation:
    """Family p(s) = base + s * direction on a fixed support, with q = base."""

    base: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        base = _validate_probs("base", self.base)
        direction = np.array(self.direction, dtype=float)
        if direction.shape != base.shape:
            raise ValueError(
                f"direction shape {direction.shape} does not match base {base.shape}"
            )
        if not np.all(np.isfinite(direction)):
            raise ValueError("direction has non-finite entries")
        if abs(float(direction.sum())) > 1e-12:
            raise ValueError(f"direction must sum to 0, got {float(direction.sum())!r}")
        direction.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "direction", direction)

    def distribution_at(self, scale: float) -> np.ndarray:
        p = self.base + float(scale) * self.direction
        if np.any(p < 0.0):
            raise ValueError(
                f"scale {scale!r} drives index {int(np.argmin(p))} below zero"
            )
        return p

    def ratio_variance(self, scale: float) -> float:
        return ratio_variance_discrete(self.distribution_at(scale), self.base)

    def exact(self, gen: DivergenceGenerator, scale: float) -> float:
        return exact_divergence_discrete(self.distribution_at(scale), self.base, gen)


@dataclass(frozen=True)
class SweepRow:
    """One (scale, exact vs quadratic approximation) comparison."""

    generator: str
    scale: float
    ratio_variance: float
    exact: float
    approx: float
    relative_error: float


SWEEP_CSV_HEADER = "generator,scale,ratio_variance,exact,approx,relative_error"


def approximation_error_sweep(gen: DivergenceGenerator, family, scales) -> list[SweepRow]:
    """Compare exact D_f against the quadratic estimate across family scales.

    Rows come back sorted by ratio variance so the CSV reads small-to-large.
    """
    rows = []
    for scale in scales:
        rv = family.ratio_variance(scale)
        exact = family.exact(gen, scale)
        approx = quadratic_approximation(gen, rv)
        if exact == 0.0:
            rel = 0.0
        elif not math.isfinite(exact):
            rel = math.inf
        else:
            rel = abs(approx - exact) / abs(exact)
        rows.append(SweepRow(gen.value, float(scale), rv, exact, approx, rel))
    rows.sort(key=lambda r: r.ratio_variance)
    return rows


def write_sweep_csv(rows, path) -> None:
    lines = [SWEEP_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.generator},{r.scale!r},{r.ratio_variance!r},"
            f"{r.exact!r},{r.approx!r},{r.relative_error!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
