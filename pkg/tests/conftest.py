import pytest
from hypothesis import HealthCheck, settings

from bnmap.model import make_network
from bnmap.reductions import circuit_to_map_network, parse_circuit

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rel_close(a, b, rel=1e-9, abs_=0.0):
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_)


@pytest.fixture
def chain_ab():
    # A -> B with Pr(a=1)=0.6 and Pr(b=1 | a=1)=0.7
    return make_network([
        ("A", 2, [], [0.4, 0.6]),
        ("B", 2, ["A"], [[0.5, 0.5], [0.3, 0.7]]),
    ], "chain")


@pytest.fixture
def fig3_net():
    """Five-variable net: A -> B, A -> C, {B, C} -> D, C -> E."""
    return make_network([
        ("A", 2, [], [0.3, 0.7]),
        ("B", 2, ["A"], [[0.9, 0.1], [0.2, 0.8]]),
        ("C", 2, ["A"], [[0.6, 0.4], [0.25, 0.75]]),
        ("D", 2, ["B", "C"], [[[0.1, 0.9], [0.5, 0.5]], [[0.7, 0.3], [0.35, 0.65]]]),
        ("E", 2, ["C"], [[0.8, 0.2], [0.45, 0.55]]),
    ], "fig3")


@pytest.fixture
def fig1_reduction():
    """~(x1 | x2) & ~x3 reduced to MAP over x1..x3 with the output node observed true."""
    return circuit_to_map_network(parse_circuit("~(x1 | x2) & ~x3"), 3)


def random_instance(rng, net, n_map):
    """Random disjoint MAP set and evidence with positive probability."""
    from bnmap.elimination import eliminate
    perm = [int(v) for v in rng.permutation(net.n)]
    q = sorted(perm[:n_map])
    rest = perm[n_map:]
    for _ in range(50):
        k = int(rng.integers(0, min(3, len(rest)) + 1))
        e = {v: int(rng.integers(net.card(v))) for v in rest[:k]}
        if eliminate(net, e).value > 0:
            return q, e
    return q, {}


# ---------------------------------------------------------------- acceptance lines

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one pass/fail line for the summary."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def report(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines[n] = line
        print(line)
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
