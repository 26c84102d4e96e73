"""Euclidean projection onto the capped simplex {z >= 0, sum(z) <= b}.

Solves min 0.5*||z - a||^2 subject to z >= 0, sum(z) <= b, the inner step of
every link update. The optimum is a soft threshold z_k = max(0, a_k - theta)
with a water level theta >= 0 chosen so the budget holds with complementary
slackness. Two independent solvers are provided (sort-based exact and
bisection) plus a KKT residual evaluator used to cross-check them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import ContractError, NumericError


@dataclass(frozen=True, eq=False)
class ProjectionInstance:
    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        if a.ndim != 1 or a.size < 1:
            raise ContractError(f"a must be a nonempty vector, got shape {a.shape}")
        b = float(self.b)
        if not (b >= 0 and math.isfinite(b)):
            raise ContractError(f"b must be a nonnegative real, got {self.b!r}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def project_sorted(inst: ProjectionInstance) -> tuple:
    """Exact projection by descending sort and prefix scan. O(K log K).

    Returns (z, theta). Ties in a are ordered by original index, which cannot
    change z since z depends on values only.
    """
    a = inst.a
    b = inst.b
    clipped = np.maximum(a, 0.0)
    if clipped.sum() <= b:
        return clipped, 0.0
    # budget is tight: theta = (prefix_sum - b) / m for the active prefix m.
    order = np.argsort(-a, kind="stable")
    srt = a[order]
    prefix = np.cumsum(srt)
    m = np.arange(1, a.size + 1)
    theta_candidates = (prefix - b) / m
    ok = srt - theta_candidates >= 0.0
    # ok[0] always holds (a_max - (a_max - b) = b >= 0) and falsehood is
    # downward-closed, so the last True index is the active-set size.
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        raise NumericError("projection scan found no admissible active set")
    theta = float(max(theta_candidates[idx[-1]], 0.0))
    z = np.maximum(a - theta, 0.0)
    return z, theta


def project_bisect(inst: ProjectionInstance, tol: float = 1e-10) -> tuple:
    """Projection via bisection on the water level. Stops when
    |sum(max(0, a - theta)) - b| <= tol; raises NumericError after 200 halvings.
    """
    if not (tol > 0):
        raise ContractError(f"tol must be positive, got {tol!r}")
    a = inst.a
    b = inst.b
    clipped = np.maximum(a, 0.0)
    if clipped.sum() <= b:
        return clipped, 0.0
    lo, hi = 0.0, float(a.max())
    theta = hi
    for _ in range(200):
        theta = 0.5 * (lo + hi)
        excess = np.maximum(a - theta, 0.0).sum() - b
        if abs(excess) <= tol:
            return np.maximum(a - theta, 0.0), theta
        if excess > 0:
            lo = theta
        else:
            hi = theta
    raise NumericError(f"projection bisection did not reach tol={tol} in 200 iterations")


def kkt_residual(inst: ProjectionInstance, z, theta: float) -> float:
    """Max violation of the optimality system for (z, theta). Zero iff optimal.

    Checks primal feasibility, dual feasibility, stationarity (the implied
    nonnegativity multiplier nu = z - a + theta must be >= 0), and both
    complementary-slackness products.
    """
    a = inst.a
    z = np.asarray(z, dtype=float)
    if z.shape != a.shape:
        raise ContractError(f"z shape {z.shape} does not match a shape {a.shape}")
    theta = float(theta)
    nu = z - a + theta
    slack = float(z.sum()) - inst.b
    worst = max(
        max(slack, 0.0),              # budget
        float(np.max(-z)),            # z >= 0
        max(-theta, 0.0),             # theta >= 0
        float(np.max(-nu)),           # nu >= 0
        float(np.max(np.abs(z * nu))),  # nu_k z_k = 0
        abs(theta * slack),           # theta (sum z - b) = 0
    )
    return max(worst, 0.0)
