import random

import networkx as nx
import pytest

from dproute import bundled
from dproute.ruleplane import compile_rules
from dproute.simnet import build_network
from dproute.topology import Hierarchy, Topology, partition_from_map

# The two-domain example network: domain 128 = {1, 2, 3}, domain 129 = {4, 5, 6},
# bridged by 2-4 and 3-5.
TWO_DOMAIN_EDGES = [(1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 6)]
TWO_DOMAIN_MAP = {1: 128, 2: 128, 3: 128, 4: 129, 5: 129, 6: 129}


@pytest.fixture(scope="session")
def diamond():
    return bundled("diamond")


@pytest.fixture(scope="session")
def diamond_rules(diamond):
    return compile_rules(diamond, "both")


@pytest.fixture
def diamond_net(diamond, diamond_rules):
    return build_network(diamond, diamond_rules)


@pytest.fixture(scope="session")
def two_domain():
    t = Topology(TWO_DOMAIN_EDGES, name="two-domain")
    return t, Hierarchy.build(t, partition_from_map(t, TWO_DOMAIN_MAP))


@pytest.fixture(scope="session")
def network_usa():
    return bundled("NetworkUsa")


@pytest.fixture(scope="session")
def cesnet():
    return bundled("Cesnet201006")


def random_connected(n, p, seed):
    """Connected G(n, p) sample as a Topology, relabelled to 1..n."""
    rng = random.Random(seed)
    while True:
        g = nx.gnp_random_graph(n, p, seed=rng.randrange(1 << 30))
        if nx.is_connected(g):
            return Topology([(u + 1, v + 1) for u, v in g.edges()], name=f"gnp{n}-{seed}")


def nx_graph(t, failed=()):
    g = nx.Graph()
    g.add_nodes_from(t.switches)
    down = {frozenset(p) for p in failed}
    g.add_edges_from(e for e in t.edges() if frozenset(e) not in down)
    return g


# one "CRITERION n PASS|FAIL: detail" line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def report(n, ok, detail):
    line = f"CRITERION {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
