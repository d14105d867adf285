"""Lagrange multiplier control for the ratio-second-moment constraint.

The trainer maximizes E[rho * A - lam * ((rho - 1)^2 - delta)] over policy
parameters while the multiplier descends on the same Lagrangian:

    lam  <-  max(0, lam - eta * (delta - measured)),

where `measured` is the observed E[(rho - 1)^2].  A measurement above the
budget delta raises lam, one below lowers it, and the projection keeps the
multiplier nonnegative.  In Fixed mode lam is a constant penalty weight and
updates only record history.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class DualMode(enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass
class DualState:
    """Multiplier lam >= 0 plus the constraint budget and step size.

    history is append-only: one (update_index, lam_after, measured) triple
    per update_lambda call, Fixed mode included.
    """

    mode: DualMode
    lam: float
    delta: float
    eta: float
    history: list = field(default_factory=list)


def initial_state(mode, lambda0: float, delta: float, eta: float) -> DualState:
    if isinstance(mode, str):
        try:
            mode = DualMode(mode)
        except ValueError:
            raise ValueError(f"unknown dual mode {mode!r}") from None
    if not isinstance(mode, DualMode):
        raise ValueError(f"unknown dual mode {mode!r}")
    if not (math.isfinite(lambda0) and lambda0 >= 0.0):
        raise ValueError(f"lambda0 must be finite and >= 0, got {lambda0!r}")
    if not (math.isfinite(delta) and delta >= 0.0):
        raise ValueError(f"delta must be finite and >= 0, got {delta!r}")
    if not (math.isfinite(eta) and eta > 0.0):
        raise ValueError(f"eta must be finite and > 0, got {eta!r}")
    return DualState(mode=mode, lam=float(lambda0), delta=float(delta), eta=float(eta))


def update_lambda(state: DualState, measured_second_moment: float) -> DualState:
    """One projected dual step from a measured E[(rho - 1)^2]."""
    measured = float(measured_second_moment)
    if not (math.isfinite(measured) and measured >= 0.0):
        raise ValueError(f"measured second moment must be finite and >= 0, got {measured!r}")
    if state.mode is DualMode.ADAPTIVE:
        state.lam = max(0.0, state.lam - state.eta * (state.delta - measured))
    state.history.append((len(state.history), state.lam, measured))
    return state
