"""Classical drift-plus-penalty backpressure baseline.

Sources trade queue backlog against V times utility; every link grants its
full capacity to the allowed session with the largest positive differential
backlog. Decision queues are the clipped virtual family, kept nonnegative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import ContractError, DecisionVector, Scenario
from .queues import step_Y


@dataclass(frozen=True)
class DppConfig:
    """V weighs utility against backlog. x_max caps source rates; None means
    each source defaults to its total outgoing capacity, beyond which any
    rate is immediately infeasible anyway."""

    V: float
    x_max: float = None

    def __post_init__(self):
        if not (float(self.V) > 0 and math.isfinite(self.V)):
            raise ContractError(f"V must be positive, got {self.V!r}")
        if self.x_max is not None and not (float(self.x_max) > 0):
            raise ContractError(f"x_max must be positive, got {self.x_max!r}")


def rate_caps(scenario: Scenario, config: DppConfig) -> np.ndarray:
    if config.x_max is not None:
        return np.full(scenario.n_sessions, float(config.x_max))
    return scenario.src_out_cap.astype(float)


def dpp_source_rate(utility, V: float, q: float, x_max: float) -> float:
    """Maximize V*U(x) - q*x over [0, x_max] intersected with the domain."""
    if q <= 0:
        return x_max
    if utility.kind == "wlog":
        # V w / x = q, open domain keeps x > 0
        return min(V * utility.weight / q, x_max)
    # wlog1p: V w / (1 + x) = q, clamped at the boundaries
    return min(max(V * utility.weight / q - 1.0, 0.0), x_max)


def dpp_slot_update(Q, scenario: Scenario, config: DppConfig) -> DecisionVector:
    """One slot of decisions from nonnegative decision queues Q (N, F)."""
    Q = np.asarray(Q, dtype=float)
    caps = rate_caps(scenario, config)
    x = np.empty(scenario.n_sessions)
    for f, s in enumerate(scenario.sessions):
        x[f] = dpp_source_rate(s.utility, config.V, float(Q[s.src, f]), float(caps[f]))
    mu = np.zeros((scenario.n_links, scenario.n_sessions))
    for l, lk in enumerate(scenario.network.links):
        best_f = -1
        best_diff = 0.0
        for f in sorted(scenario.allowed[l]):
            diff = Q[lk.tail, f] - (Q[lk.head, f] if lk.head != scenario.sessions[f].dst else 0.0)
            if diff > best_diff:  # strict: ties keep the lowest session id
                best_diff = diff
                best_f = f
        if best_f >= 0:
            mu[l, best_f] = lk.capacity
    return DecisionVector(x, mu)


@dataclass(frozen=True, eq=False)
class DppState:
    Q: np.ndarray
    t: int


def dpp_initial_state(scenario: Scenario) -> DppState:
    return DppState(np.zeros((scenario.n_nodes, scenario.n_sessions)), 0)


def dpp_step(state: DppState, scenario: Scenario, config: DppConfig) -> tuple:
    """Returns (decisions, next state). Queues advance by the clipped update."""
    y = dpp_slot_update(state.Q, scenario, config)
    q = step_Y(state.Q, y.x, y.mu, scenario)
    return y, DppState(q, state.t + 1)
