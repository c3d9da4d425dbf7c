import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnmap.elimination import eliminate
from bnmap.jointree import ExactScorer, JointreeEngine, build_jointree, score_all_neighbors
from bnmap.model import make_network
from bnmap.netgen import chain_polytree, random_network

from conftest import rel_close, random_instance


def test_chain_jointree():
    net = make_network([("A", 2, [], [0.5, 0.5]), ("B", 2, ["A"], np.full((2, 2), 0.5)),
                        ("C", 2, ["B"], np.full((2, 2), 0.5))])
    jt = build_jointree(net, [0, 1, 2])
    assert sorted(jt.clusters) == [(0, 1), (1, 2)]
    assert len(jt.edges) == 1 and jt.separator(*jt.edges[0]) == (1,)


def test_fig4_polytree_clusters():
    net = chain_polytree(6)
    jt = build_jointree(net)
    assert jt.max_cluster_size == 3
    assert jt.has_running_intersection()


def test_random_jointree_properties():
    rng = np.random.default_rng(0)
    for _ in range(5):
        net = random_network(20, 0.2, rng)
        jt = build_jointree(net)
        assert jt.has_running_intersection()
        for v in range(net.n):
            assert set(net.family(v)) <= set(jt.clusters[jt.cpt_host[v]])
            assert v in jt.clusters[jt.indicator_host[v]]


def test_single_map_variable_rows():
    rng = np.random.default_rng(5)
    net = random_network(8, 0.3, rng, max_card=3)
    x = 3
    e = {7: 0}
    ns = score_all_neighbors(build_jointree(net), {x: 0}, e)
    for s in range(net.card(x)):
        assert rel_close(ns.score(x, s), eliminate(net, {**e, x: s}).value)
    assert rel_close(ns.current_score, eliminate(net, {**e, x: 0}).value)


@given(st.integers(0, 2 ** 32 - 1))
def test_all_neighbors_match_elimination(seed):
    rng = np.random.default_rng(seed)
    net = random_network(10, 0.3, rng, max_card=3)
    q, e = random_instance(rng, net, 4)
    s = {v: int(rng.integers(net.card(v))) for v in q}
    engine = JointreeEngine(build_jointree(net))
    before = engine.propagations
    ns = score_all_neighbors(engine, s, e)
    assert engine.propagations == before + 1
    assert rel_close(ns.current_score, eliminate(net, {**e, **s}).value, 1e-9, 1e-300)
    for v in q:
        for x in range(net.card(v)):
            ref = eliminate(net, {**e, **s, v: x}).value
            assert rel_close(ns.score(v, x), ref, 1e-9, 1e-300)


def test_exact_scorer_memo_and_posteriors():
    rng = np.random.default_rng(11)
    net = random_network(9, 0.3, rng)
    q, e = random_instance(rng, net, 3)
    sc = ExactScorer(net, e, q)
    state = tuple(0 for _ in q)
    ev = sc.evaluate(state)
    n = sc.propagations
    assert sc.evaluate(state) is ev and sc.propagations == n
    post = sc.posteriors(e, q)
    pe = eliminate(net, e).value
    for v in q:
        for x in range(net.card(v)):
            assert post[v][x] == pytest.approx(eliminate(net, {**e, v: x}).value / pe, rel=1e-9)
