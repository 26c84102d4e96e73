"""Shared fixtures. Oracle solves and long simulation runs are session-scoped
so the expensive work happens once per test session. Each run dict also
records the wall-clock seconds the simulations took, because the acceptance
tests hold the runs to time budgets."""
import time
from pathlib import Path

import pytest

import proxbp as P

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="session")
def singlelink():
    return P.load_scenario(SCENARIO_DIR / "singlelink.net")


@pytest.fixture(scope="session")
def sixnode():
    return P.load_scenario(SCENARIO_DIR / "sixnode.net")


@pytest.fixture(scope="session")
def relay():
    # two links in series, the second one the bottleneck
    return P.parse_scenario(
        "nodes 3\n"
        "link 0 1 1.0\n"
        "link 1 2 0.5\n"
        "session 0 0 2 wlog 1.0\n")


@pytest.fixture(scope="session")
def singlelink_sol(singlelink):
    return P.solve_centralized(singlelink, tol=1e-5)


@pytest.fixture(scope="session")
def sixnode_sol(sixnode):
    return P.solve_centralized(sixnode, tol=1e-5)


def _timed_runs(pairs, mode, slots, collect=False):
    out = {"seconds": 0.0}
    for name, sc, sol in pairs:
        cfg = P.AlgConfig(P.default_alpha(sc.network, mode))
        t0 = time.monotonic()
        trace = P.run(sc, "new", cfg, slots, oracle=sol, collect_queues=collect)
        out["seconds"] += time.monotonic() - t0
        out[name] = (sc, sol, trace)
    return out


@pytest.fixture(scope="session")
def gap_runs(singlelink, sixnode, singlelink_sol, sixnode_sol):
    """10^4 proximal slots on both scenarios with the utility-gap weights."""
    return _timed_runs((("singlelink", singlelink, singlelink_sol),
                        ("sixnode", sixnode, sixnode_sol)),
                       "utility-gap", 10_000)


@pytest.fixture(scope="session")
def soak_runs(singlelink, sixnode, singlelink_sol, sixnode_sol):
    """10^5 proximal slots on both scenarios with the queue-bound weights.
    Queue histories are kept so per-node bounds can be audited."""
    return _timed_runs((("singlelink", singlelink, singlelink_sol),
                        ("sixnode", sixnode, sixnode_sol)),
                       "queue-bound", 100_000, collect=True)


@pytest.fixture(scope="session")
def dpp_runs(sixnode, sixnode_sol):
    """10^4 baseline slots on the six-node scenario at three V settings."""
    out = {}
    for v in (10.0, 100.0, 500.0):
        out[v] = P.run(sixnode, "dpp", P.DppConfig(V=v), 10_000, oracle=sixnode_sol)
    return out
