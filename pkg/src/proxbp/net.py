"""Network model: topology, sessions, utilities, scenario files, flow residuals.

A scenario couples a directed capacitated graph with a set of sessions, each
session shipping data from a source node to a destination node under a concave
utility of its injection rate. Per-link allow-sets restrict which sessions may
use which link. Everything here is immutable after construction and safe to
share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ScenarioFormatError(ValueError):
    """Malformed scenario document. Carries the offending 1-based line number."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ScenarioValidationError(ValueError):
    """Structurally parseable but semantically invalid scenario data."""


class DomainError(ValueError):
    """A utility was evaluated outside its domain."""


class ContractError(ValueError):
    """An operation was invoked outside its stated contract."""


class NumericError(RuntimeError):
    """An iterative numeric routine failed to converge within its cap."""


UTILITY_KINDS = ("wlog", "wlog1p")


@dataclass(frozen=True)
class Utility:
    """Concave session utility.

    kind "wlog" is w*log(x) on the open domain (0, inf); kind "wlog1p" is
    w*log(1+x) on the closed domain [0, inf). Evaluation outside the domain
    raises DomainError, never returns a silent value.
    """

    kind: str
    weight: float

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ScenarioValidationError(f"unknown utility kind {self.kind!r}")
        w = float(self.weight)
        if not (w > 0 and math.isfinite(w)):
            raise ScenarioValidationError(f"utility weight must be positive, got {self.weight!r}")
        object.__setattr__(self, "weight", w)

    @property
    def open_at_zero(self) -> bool:
        # wlog diverges at 0+, so 0 itself is outside the domain
        return self.kind == "wlog"

    def value(self, x) -> float:
        x = float(x)
        if self.kind == "wlog":
            if x <= 0:
                raise DomainError(f"wlog utility undefined at x={x}")
            return self.weight * math.log(x)
        if x < 0:
            raise DomainError(f"wlog1p utility undefined at x={x}")
        return self.weight * math.log1p(x)

    def derivative(self, x) -> float:
        x = float(x)
        if self.kind == "wlog":
            if x <= 0:
                raise DomainError(f"wlog derivative undefined at x={x}")
            return self.weight / x
        if x < 0:
            raise DomainError(f"wlog1p derivative undefined at x={x}")
        return self.weight / (1.0 + x)


@dataclass(frozen=True)
class Link:
    tail: int
    head: int
    capacity: float


@dataclass(frozen=True)
class Network:
    """Directed graph with strictly positive link capacities."""

    node_count: int
    links: tuple

    def __post_init__(self):
        if self.node_count < 1:
            raise ScenarioValidationError("node_count must be at least 1")
        object.__setattr__(self, "links", tuple(self.links))
        for i, l in enumerate(self.links):
            if not (0 <= l.tail < self.node_count) or not (0 <= l.head < self.node_count):
                raise ScenarioValidationError(f"link {i} endpoint out of range: {l}")
            if l.tail == l.head:
                raise ScenarioValidationError(f"link {i} is a self-loop at node {l.tail}")
            if not (float(l.capacity) > 0 and math.isfinite(l.capacity)):
                raise ScenarioValidationError(f"link {i} capacity must be positive, got {l.capacity!r}")

    @cached_property
    def in_links(self) -> tuple:
        ins = [[] for _ in range(self.node_count)]
        for i, l in enumerate(self.links):
            ins[l.head].append(i)
        return tuple(tuple(v) for v in ins)

    @cached_property
    def out_links(self) -> tuple:
        outs = [[] for _ in range(self.node_count)]
        for i, l in enumerate(self.links):
            outs[l.tail].append(i)
        return tuple(tuple(v) for v in outs)

    @cached_property
    def degrees(self) -> np.ndarray:
        d = np.array([len(self.in_links[n]) + len(self.out_links[n]) for n in range(self.node_count)])
        d.setflags(write=False)
        return d

    @cached_property
    def caps(self) -> np.ndarray:
        c = np.array([l.capacity for l in self.links], dtype=float)
        c.setflags(write=False)
        return c

    @cached_property
    def incidence(self) -> np.ndarray:
        """(N, L) matrix, +1 at the head of each link and -1 at its tail."""
        a = np.zeros((self.node_count, len(self.links)))
        for i, l in enumerate(self.links):
            a[l.head, i] = 1.0
            a[l.tail, i] = -1.0
        a.setflags(write=False)
        return a

    @cached_property
    def out_cap(self) -> np.ndarray:
        """(N,) sum of outgoing link capacities per node."""
        s = np.zeros(self.node_count)
        for l in self.links:
            s[l.tail] += l.capacity
        s.setflags(write=False)
        return s


@dataclass(frozen=True)
class Session:
    id: int
    src: int
    dst: int
    utility: Utility


@dataclass(frozen=True)
class Scenario:
    """Network plus sessions plus per-link allowed-session sets."""

    network: Network
    sessions: tuple
    allowed: tuple  # one frozenset of session ids per link

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        object.__setattr__(self, "allowed", tuple(frozenset(a) for a in self.allowed))
        n = self.network.node_count
        for i, s in enumerate(self.sessions):
            if s.id != i:
                raise ScenarioValidationError(
                    f"session ids must be 0..F-1 in order, got id {s.id} at position {i}")
            if not (0 <= s.src < n) or not (0 <= s.dst < n):
                raise ScenarioValidationError(f"session {s.id} references a missing node")
            if s.src == s.dst:
                raise ScenarioValidationError(f"session {s.id} has src == dst == {s.src}")
        if len(self.allowed) != len(self.network.links):
            raise ScenarioValidationError("allowed must have one entry per link")
        for li, al in enumerate(self.allowed):
            for f in al:
                if not (0 <= f < len(self.sessions)):
                    raise ScenarioValidationError(f"allow-set of link {li} names missing session {f}")

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    @property
    def n_links(self) -> int:
        return len(self.network.links)

    @property
    def n_nodes(self) -> int:
        return self.network.node_count

    @cached_property
    def src(self) -> np.ndarray:
        a = np.array([s.src for s in self.sessions], dtype=int)
        a.setflags(write=False)
        return a

    @cached_property
    def dst(self) -> np.ndarray:
        a = np.array([s.dst for s in self.sessions], dtype=int)
        a.setflags(write=False)
        return a

    @cached_property
    def allow_mask(self) -> np.ndarray:
        """(L, F) boolean, True where the session may use the link."""
        m = np.zeros((self.n_links, self.n_sessions), dtype=bool)
        for li, al in enumerate(self.allowed):
            for f in al:
                m[li, f] = True
        m.setflags(write=False)
        return m

    @cached_property
    def active(self) -> np.ndarray:
        """(N, F) boolean, True at (n, f) when n is not the destination of f.

        Only active pairs carry flow-balance constraints and queues.
        """
        m = np.ones((self.n_nodes, self.n_sessions), dtype=bool)
        for s in self.sessions:
            m[s.dst, s.id] = False
        m.setflags(write=False)
        return m

    @cached_property
    def src_out_cap(self) -> np.ndarray:
        """(F,) total capacity leaving each session's source node."""
        a = self.network.out_cap[self.src].copy()
        a.setflags(write=False)
        return a


@dataclass(frozen=True, eq=False)
class DecisionVector:
    """One slot's decisions: source rates x (F,) and link-session rates mu (L, F)."""

    x: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        mu = np.array(self.mu, dtype=float)
        if x.ndim != 1 or mu.ndim != 2 or mu.shape[1] != x.shape[0]:
            raise ScenarioValidationError(
                f"decision shapes inconsistent: x {x.shape}, mu {mu.shape}")
        x.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "mu", mu)


def zero_decision(scenario: Scenario) -> DecisionVector:
    return DecisionVector(np.zeros(scenario.n_sessions),
                          np.zeros((scenario.n_links, scenario.n_sessions)))


CAP_TOL = 1e-9  # absolute slack for capacity feasibility checks


def validate_decision(scenario: Scenario, y: DecisionVector, tol: float = CAP_TOL):
    """Raise ScenarioValidationError unless y satisfies the per-slot set constraints."""
    if y.x.shape != (scenario.n_sessions,) or y.mu.shape != (scenario.n_links, scenario.n_sessions):
        raise ScenarioValidationError("decision shape does not match scenario")
    if np.any(y.x < 0) or np.any(y.mu < 0):
        raise ScenarioValidationError("negative rate in decision")
    if np.any(y.mu[~scenario.allow_mask] != 0):
        raise ScenarioValidationError("nonzero rate on a forbidden (link, session) pair")
    load = y.mu.sum(axis=1)
    over = load - scenario.network.caps
    if np.any(over > tol):
        li = int(np.argmax(over))
        raise ScenarioValidationError(
            f"link {li} overloaded: load {load[li]!r} exceeds capacity {scenario.network.caps[li]!r}")


def residual_matrix(scenario: Scenario, x, mu) -> np.ndarray:
    """(N, F) flow-balance residuals, zero at each session's destination.

    Entry (n, f) is x_f (if n is the source of f) plus incoming mu minus
    outgoing mu. Positive means injection exceeds service at that node.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    g = scenario.network.incidence @ mu
    g[scenario.src, np.arange(scenario.n_sessions)] += x
    g[~scenario.active] = 0.0
    return g


def flow_residual(scenario: Scenario, f: int, n: int, y: DecisionVector) -> float:
    """Signed flow-balance residual of session f at node n for decisions y."""
    s = scenario.sessions[f]
    if n == s.dst:
        raise ContractError(f"node {n} is the destination of session {f}, no flow-balance constraint")
    net = scenario.network
    tot = float(y.x[f]) if n == s.src else 0.0
    for l in net.in_links[n]:
        tot += float(y.mu[l, f])
    for l in net.out_links[n]:
        tot -= float(y.mu[l, f])
    return tot


def total_utility(scenario: Scenario, x) -> float:
    """Sum of session utilities at the rate vector x."""
    x = np.asarray(x, dtype=float)
    return sum(s.utility.value(x[f]) for f, s in enumerate(scenario.sessions))


# ---------------------------------------------------------------------------
# scenario document format


def parse_scenario(text: str) -> Scenario:
    """Parse a scenario document.

    Line-oriented, whitespace-separated, '#' starts a comment:
      nodes <N>
      link <tail> <head> <capacity>          (order defines the link index)
      session <id> <src> <dst> <kind> <weight>   kind is wlog or wlog1p
      allow <link_index> <session_id>        (any allow line for link l
                                              replaces l's default full set)
      allow <link_index> none                (explicitly empty allow-set)
    """
    node_count = None
    links = []
    sessions = []
    allow_ids: dict = {}
    allow_none: set = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "nodes":
            if node_count is not None:
                raise ScenarioFormatError(lineno, "duplicate nodes line")
            node_count = _parse_int(lineno, parts, 1, 2)
        elif tag == "link":
            if len(parts) != 4:
                raise ScenarioFormatError(lineno, "link needs: tail head capacity")
            links.append(Link(_parse_int(lineno, parts, 1), _parse_int(lineno, parts, 2),
                              _parse_float(lineno, parts, 3)))
        elif tag == "session":
            if len(parts) != 6:
                raise ScenarioFormatError(lineno, "session needs: id src dst kind weight")
            if parts[4] not in UTILITY_KINDS:
                raise ScenarioFormatError(lineno, f"unknown utility kind {parts[4]!r}")
            sessions.append(Session(_parse_int(lineno, parts, 1), _parse_int(lineno, parts, 2),
                                    _parse_int(lineno, parts, 3),
                                    Utility(parts[4], _parse_float(lineno, parts, 5))))
        elif tag == "allow":
            if len(parts) != 3:
                raise ScenarioFormatError(lineno, "allow needs: link_index session_id")
            li = _parse_int(lineno, parts, 1)
            if parts[2] == "none":
                if allow_ids.get(li):
                    raise ScenarioFormatError(lineno, f"allow {li} none conflicts with earlier allow lines")
                allow_none.add(li)
            else:
                if li in allow_none:
                    raise ScenarioFormatError(lineno, f"allow line conflicts with earlier allow {li} none")
                allow_ids.setdefault(li, []).append(_parse_int(lineno, parts, 2))
        else:
            raise ScenarioFormatError(lineno, f"unknown directive {tag!r}")
    if node_count is None:
        raise ScenarioValidationError("document has no nodes line")
    network = Network(node_count, tuple(links))
    nf = len(sessions)
    for li in list(allow_ids) + list(allow_none):
        if not (0 <= li < len(links)):
            raise ScenarioValidationError(f"allow line references missing link {li}")
    full = frozenset(range(nf))
    allowed = []
    for li in range(len(links)):
        if li in allow_none:
            allowed.append(frozenset())
        elif li in allow_ids:
            allowed.append(frozenset(allow_ids[li]))
        else:
            allowed.append(full)
    return Scenario(network, tuple(sessions), tuple(allowed))


def _parse_int(lineno, parts, i, need_len=None):
    if need_len is not None and len(parts) != need_len:
        raise ScenarioFormatError(lineno, f"expected {need_len - 1} fields after {parts[0]!r}")
    try:
        return int(parts[i])
    except ValueError:
        raise ScenarioFormatError(lineno, f"expected integer, got {parts[i]!r}") from None


def _parse_float(lineno, parts, i):
    try:
        return float(parts[i])
    except ValueError:
        raise ScenarioFormatError(lineno, f"expected number, got {parts[i]!r}") from None


def serialize_scenario(s: Scenario) -> str:
    """Inverse of parse_scenario; parse(serialize(s)) reproduces s exactly."""
    out = [f"nodes {s.network.node_count}"]
    for l in s.network.links:
        out.append(f"link {l.tail} {l.head} {float(l.capacity)!r}")
    for f in s.sessions:
        out.append(f"session {f.id} {f.src} {f.dst} {f.utility.kind} {float(f.utility.weight)!r}")
    full = frozenset(range(s.n_sessions))
    for li, al in enumerate(s.allowed):
        if al == full:
            continue
        if not al:
            out.append(f"allow {li} none")
        else:
            for f in sorted(al):
                out.append(f"allow {li} {f}")
    return "\n".join(out) + "\n"


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def save_scenario(scenario: Scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_scenario(scenario))


# ---------------------------------------------------------------------------
# multipath expansion


def multipath_expand(base: Scenario, paths) -> tuple:
    """Expand sessions into one sub-session per routed path.

    paths[f] lists link-index paths for session f; every session needs at
    least one path. Each path must be a connected directed walk from the
    session's source to its destination, using only links that allow f.
    Returns (scenario, parents) where parents[j] is the originating session
    of sub-session j. Allow-sets of the result contain exactly the
    sub-sessions whose path uses the link; the source-rate coupling across
    sibling paths is intentionally out of scope here.
    """
    net = base.network
    if len(paths) != base.n_sessions:
        raise ScenarioValidationError(
            f"need paths for all {base.n_sessions} sessions, got {len(paths)} entries")
    subs = []
    parents = []
    uses = []
    for s in base.sessions:
        plist = paths[s.id]
        if not plist:
            raise ScenarioValidationError(f"session {s.id} has no paths")
        for path in plist:
            path = tuple(int(l) for l in path)
            if not path:
                raise ScenarioValidationError(f"session {s.id} has an empty path")
            for l in path:
                if not (0 <= l < len(net.links)):
                    raise ScenarioValidationError(f"path of session {s.id} uses missing link {l}")
                if s.id not in base.allowed[l]:
                    raise ScenarioValidationError(
                        f"path of session {s.id} uses link {l} that forbids it")
            if net.links[path[0]].tail != s.src:
                raise ScenarioValidationError(
                    f"path of session {s.id} starts at node {net.links[path[0]].tail}, not src {s.src}")
            if net.links[path[-1]].head != s.dst:
                raise ScenarioValidationError(
                    f"path of session {s.id} ends at node {net.links[path[-1]].head}, not dst {s.dst}")
            for a, b in zip(path, path[1:]):
                if net.links[a].head != net.links[b].tail:
                    raise ScenarioValidationError(
                        f"path of session {s.id} is disconnected between links {a} and {b}")
            j = len(subs)
            subs.append(Session(j, s.src, s.dst, s.utility))
            parents.append(s.id)
            uses.append(frozenset(path))
    allowed = tuple(frozenset(j for j in range(len(subs)) if li in uses[j])
                    for li in range(len(net.links)))
    return Scenario(net, tuple(subs), allowed), tuple(parents)
