"""Per-source scalar update: maximize U(x) - W*x - alpha*(x - x_prev)^2.

The objective is 2*alpha strongly concave, so the maximizer over the utility
domain is unique. Its slope h(x) = U'(x) - W - 2*alpha*(x - x_prev) is
strictly decreasing; the optimum is the root of h, or the left domain edge
when h is already nonpositive there. Weighted-log problems admit a closed
form; weighted-log1p problems use bisection with a doubling bracket.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .net import ContractError, NumericError, Utility


@dataclass(frozen=True)
class RateProblem:
    """One source's slot problem. pressure is the queue weight W multiplying x."""

    utility: Utility
    pressure: float
    x_prev: float
    alpha: float

    def __post_init__(self):
        if not (float(self.alpha) > 0 and math.isfinite(self.alpha)):
            raise ContractError(f"alpha must be positive, got {self.alpha!r}")
        if not (float(self.x_prev) >= 0 and math.isfinite(self.x_prev)):
            raise ContractError(f"x_prev must lie in the domain closure, got {self.x_prev!r}")
        if not math.isfinite(float(self.pressure)):
            raise ContractError(f"pressure must be finite, got {self.pressure!r}")
        object.__setattr__(self, "pressure", float(self.pressure))
        object.__setattr__(self, "x_prev", float(self.x_prev))
        object.__setattr__(self, "alpha", float(self.alpha))


def objective(p: RateProblem, x) -> float:
    x = float(x)
    return p.utility.value(x) - p.pressure * x - p.alpha * (x - p.x_prev) ** 2


def slope(p: RateProblem, x) -> float:
    """h(x), the derivative of the slot objective. Strictly decreasing."""
    x = float(x)
    return p.utility.derivative(x) - p.pressure - 2.0 * p.alpha * (x - p.x_prev)


def closed_form_wlog(p: RateProblem) -> float:
    """Unique root of h for weighted-log utilities.

    h(x) = w/x - D - 2*alpha*x with D = W - 2*alpha*x_prev, so
    2*alpha*x^2 + D*x - w = 0. The positive root is evaluated in the branch
    that avoids subtractive cancellation.
    """
    if p.utility.kind != "wlog":
        raise ContractError(f"closed form requires a wlog utility, got {p.utility.kind!r}")
    w = p.utility.weight
    d = p.pressure - 2.0 * p.alpha * p.x_prev
    disc = math.sqrt(d * d + 8.0 * p.alpha * w)
    if d > 0:
        return 2.0 * w / (d + disc)
    return (disc - d) / (4.0 * p.alpha)


def solve_rate(p: RateProblem, tol: float = 1e-10) -> float:
    """Maximizer of the slot objective over the utility domain.

    For wlog the closed form is used exclusively (h diverges at 0+, so the
    optimum is always interior). For wlog1p, h(0) <= 0 pins the boundary
    x = 0; otherwise the root is bracketed by doubling and bisected until the
    bracket width is below tol.
    """
    if not (tol > 0):
        raise ContractError(f"tol must be positive, got {tol!r}")
    if p.utility.kind == "wlog":
        return closed_form_wlog(p)
    lo = 0.0
    if slope(p, lo) <= 0:
        return 0.0
    hi = max(1.0, 2.0 * p.x_prev)
    for _ in range(64):
        if slope(p, hi) < 0:
            break
        hi *= 2.0
    else:
        raise NumericError("rate bracket expansion failed after 64 doublings")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if slope(p, mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
