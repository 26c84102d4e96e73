"""Queue dynamics: clipped virtual (Y), store-and-forward physical (Z), signed
virtual (Q), plus scripted-policy replay and the queue-bound transfer audit.

All three families are stepped from the same per-slot decisions. Y assumes
freshly injected data can traverse the whole network within its arrival slot;
Z is faithful to physical forwarding, serving from existing backlog before
arrivals join; Q integrates the signed flow residuals without clipping.
Arrays are (N, F) with destination entries pinned at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import ContractError, Scenario, ScenarioValidationError, residual_matrix

CAP_TOL = 1e-9


def arrival_matrix(scenario: Scenario, x) -> np.ndarray:
    """Scatter per-session source rates into an (N, F) exogenous-arrival matrix."""
    m = np.zeros((scenario.n_nodes, scenario.n_sessions))
    m[scenario.src, np.arange(scenario.n_sessions)] = np.asarray(x, dtype=float)
    return m


def residual_with_arrivals(scenario: Scenario, arrivals, mu) -> np.ndarray:
    """Flow residuals for either a per-session rate vector or a full (N, F)
    exogenous-arrival matrix. Destination entries are zero."""
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.ndim == 1:
        return residual_matrix(scenario, arrivals, mu)
    g = scenario.network.incidence @ np.asarray(mu, dtype=float)
    g += arrivals
    g[~scenario.active] = 0.0
    return g


def step_Y(Y, arrivals, mu, scenario: Scenario) -> np.ndarray:
    """Clipped virtual queues: everything prescribed counts, then clip at zero."""
    nxt = np.maximum(np.asarray(Y, dtype=float) + residual_with_arrivals(scenario, arrivals, mu), 0.0)
    nxt[~scenario.active] = 0.0
    return nxt


def step_Q(Q, arrivals, mu, scenario: Scenario) -> np.ndarray:
    """Signed virtual queues: integrate residuals, no clipping."""
    return np.asarray(Q, dtype=float) + residual_with_arrivals(scenario, arrivals, mu)


def step_Z(Z, arrivals, mu, scenario: Scenario) -> tuple:
    """Physical store-and-forward queues. Returns (Z next, actual sends (L, F)).

    Service first: each node fills its outgoing prescriptions in ascending
    link-index order from current backlog only, so a link's actual transfer is
    min(prescribed, what is left). Upstream sends and exogenous arrivals join
    afterwards and cannot move again until the next slot.
    """
    net = scenario.network
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.ndim == 1:
        arrivals = arrival_matrix(scenario, arrivals)
    mu = np.asarray(mu, dtype=float)
    rem = np.array(Z, dtype=float)
    sends = np.zeros((scenario.n_links, scenario.n_sessions))
    for n in range(scenario.n_nodes):
        avail = rem[n]
        for l in net.out_links[n]:
            take = np.minimum(np.maximum(mu[l], 0.0), avail)
            sends[l] = take
            avail -= take
    nxt = rem + arrivals
    for l, lk in enumerate(net.links):
        nxt[lk.head] += sends[l]
    nxt[~scenario.active] = 0.0
    return nxt, sends


@dataclass(frozen=True, eq=False)
class QueueTriple:
    """The three families under one decision stream."""

    Y: np.ndarray
    Z: np.ndarray
    Q: np.ndarray


def zero_queues(scenario: Scenario) -> QueueTriple:
    shape = (scenario.n_nodes, scenario.n_sessions)
    return QueueTriple(np.zeros(shape), np.zeros(shape), np.zeros(shape))


def step_triple(q: QueueTriple, arrivals, mu, scenario: Scenario) -> tuple:
    """Advance all three families one slot. Returns (next triple, actual sends)."""
    ny = step_Y(q.Y, arrivals, mu, scenario)
    nz, sends = step_Z(q.Z, arrivals, mu, scenario)
    nq = step_Q(q.Q, arrivals, mu, scenario)
    return QueueTriple(ny, nz, nq), sends


# ---------------------------------------------------------------------------
# scripted policies


@dataclass(frozen=True, eq=False)
class ScriptedPolicy:
    """Fixed per-slot exogenous arrivals and prescribed link rates.

    mu is the physical forwarding timeline; mu_instant prescribes each
    arrival's entire remaining path within its arrival slot, the schedule the
    clipped virtual model is allowed to follow. Both must respect capacities
    and allow-sets; slot t of each array drives the step from state t to t+1.
    """

    arrivals: np.ndarray   # (T, N, F)
    mu: np.ndarray         # (T, L, F)
    mu_instant: np.ndarray  # (T, L, F)

    def __post_init__(self):
        arr = np.asarray(self.arrivals, dtype=float).copy()
        mu = np.asarray(self.mu, dtype=float).copy()
        mi = np.asarray(self.mu_instant, dtype=float).copy()
        if arr.ndim != 3 or mu.ndim != 3 or mi.ndim != 3:
            raise ScenarioValidationError("policy arrays must be 3-d (slot, ..., session)")
        if not (arr.shape[0] == mu.shape[0] == mi.shape[0]) or mu.shape != mi.shape \
                or arr.shape[2] != mu.shape[2]:
            raise ScenarioValidationError(
                f"policy shapes inconsistent: arrivals {arr.shape}, mu {mu.shape}, mu_instant {mi.shape}")
        for a in (arr, mu, mi):
            a.setflags(write=False)
        object.__setattr__(self, "arrivals", arr)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "mu_instant", mi)

    @property
    def slots(self) -> int:
        return self.arrivals.shape[0]


def validate_policy(scenario: Scenario, policy: ScriptedPolicy, tol: float = CAP_TOL):
    """Raise unless the policy fits the scenario: shapes, nonnegativity,
    allow-sets, capacities, and no arrivals at destinations."""
    n, f, l = scenario.n_nodes, scenario.n_sessions, scenario.n_links
    if policy.arrivals.shape[1:] != (n, f) or policy.mu.shape[1:] != (l, f):
        raise ScenarioValidationError("policy shapes do not match the scenario")
    if np.any(policy.arrivals < 0):
        raise ScenarioValidationError("negative exogenous arrival")
    if np.any(policy.arrivals[:, ~scenario.active] != 0):
        raise ScenarioValidationError("exogenous arrival at a session destination")
    for name, sched in (("mu", policy.mu), ("mu_instant", policy.mu_instant)):
        if np.any(sched < 0):
            raise ScenarioValidationError(f"{name} has a negative rate")
        if np.any(sched[:, ~scenario.allow_mask] != 0):
            raise ScenarioValidationError(f"{name} uses a forbidden (link, session) pair")
        load = sched.sum(axis=2)
        over = load - scenario.network.caps[None, :]
        if np.any(over > tol):
            t, li = np.unravel_index(int(np.argmax(over)), over.shape)
            raise ScenarioValidationError(
                f"{name} overloads link {li} at slot {t}: load {load[t, li]!r}")


@dataclass(frozen=True, eq=False)
class ScriptedTrace:
    """Queue histories under a scripted policy. State index 0 is the empty start,
    index t is the state after t steps; Y follows mu_instant, Z and Q follow mu."""

    Y: np.ndarray      # (T+1, N, F)
    Z: np.ndarray      # (T+1, N, F)
    Q: np.ndarray      # (T+1, N, F)
    sends: np.ndarray  # (T, L, F) actual physical transfers


def run_scripted(scenario: Scenario, policy: ScriptedPolicy, validate: bool = True) -> ScriptedTrace:
    if validate:
        validate_policy(scenario, policy)
    t_max = policy.slots
    shape = (scenario.n_nodes, scenario.n_sessions)
    y_hist = np.zeros((t_max + 1,) + shape)
    z_hist = np.zeros((t_max + 1,) + shape)
    q_hist = np.zeros((t_max + 1,) + shape)
    sends = np.zeros((t_max, scenario.n_links, scenario.n_sessions))
    for t in range(t_max):
        arr = policy.arrivals[t]
        y_hist[t + 1] = step_Y(y_hist[t], arr, policy.mu_instant[t], scenario)
        z_hist[t + 1], sends[t] = step_Z(z_hist[t], arr, policy.mu[t], scenario)
        q_hist[t + 1] = step_Q(q_hist[t], arr, policy.mu[t], scenario)
    return ScriptedTrace(y_hist, z_hist, q_hist, sends)


# ---------------------------------------------------------------------------
# bound transfer audit


def audit_queue_bounds(Y, Z, B: float, scenario: Scenario, tol: float = 1e-9) -> list:
    """Check the bound transfer: if the signed queues stayed within |Q| <= B
    under some decision stream, then both the clipped and the physical queues
    must stay below 2B + sum of outgoing capacities at every (slot, node,
    session) under those same decisions.

    Y and Z are histories shaped (T, N, F). Returns one record per violation,
    (slot, family, node, session, value, bound); empty iff the bounds hold.
    """
    if not (B >= 0):
        raise ContractError(f"B must be a nonnegative real, got {B!r}")
    limit = 2.0 * B + scenario.network.out_cap[:, None]
    out = []
    for name, fam in (("Y", Y), ("Z", Z)):
        fam = np.asarray(fam, dtype=float)
        bad = np.argwhere(fam > limit[None, :, :] + tol)
        for t, n, f in bad:
            out.append((int(t), name, int(n), int(f), float(fam[t, n, f]), float(limit[n, 0])))
    return out
