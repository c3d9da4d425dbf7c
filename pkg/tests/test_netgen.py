import numpy as np
import pytest
from hypothesis import given, strategies as st

from bnmap.elimination import eliminate, min_fill_order, order_width
from bnmap.formats import dumps_network
from bnmap.model import make_network
from bnmap.netgen import (ONE, TWO, EvidenceSamplingError, GenSpec, gen_structure, generate, quantify_bias,
                          sample_evidence)


def test_two_extremes():
    assert all(not ps for ps in gen_structure(GenSpec(method=TWO, n=6, p=0.0)))
    full = gen_structure(GenSpec(method=TWO, n=4, p=1.0))
    assert sum(len(ps) for ps in full) == 6


@given(st.sampled_from([ONE, TWO]), st.integers(1, 40), st.floats(0, 0.5), st.integers(0, 2 ** 32 - 1))
def test_generated_nets_validate_and_repeat(method, n, bias, seed):
    spec = GenSpec(method=method, n=n, c=5, p=0.2, bias=bias, seed=seed)
    a, b = generate(spec), generate(spec)
    assert dumps_network(a) == dumps_network(b)
    for v in range(a.n):
        assert all(u < v for u in a.parents[v])


def test_method_one_width_band():
    widths = [order_width(net, min_fill_order(net)).width
              for net in (generate(GenSpec(method=ONE, n=100, c=12, seed=s)) for s in range(20))]
    assert all(8 <= w <= 18 for w in widths), widths


def test_bias_zero_is_deterministic():
    net = generate(GenSpec(method=TWO, n=30, p=0.2, bias=0.0, seed=1))
    for v in range(net.n):
        if net.parents[v]:
            assert set(np.unique(net.cpt_array(v))) <= {0.0, 1.0}


def test_bias_bounds_min_entry():
    net = generate(GenSpec(method=TWO, n=30, p=0.2, bias=0.1, seed=2))
    for v in range(net.n):
        if net.parents[v]:
            assert np.all(net.cpt_array(v).min(axis=-1) < 0.1)


def test_bias_half_is_uniform_on_the_edge():
    rng = np.random.default_rng(0)
    parents = [[]] + [[0]] * 5000
    net = quantify_bias(parents, 0.5, rng)
    mins = np.concatenate([net.cpt_array(v).min(axis=-1).ravel() for v in range(1, net.n)])
    assert len(mins) == 10 ** 4
    assert abs(mins.mean() - 0.25) < 0.01


def test_streams_are_independent():
    a = generate(GenSpec(method=TWO, n=20, p=0.3, bias=0.1, seed=4))
    b = generate(GenSpec(method=TWO, n=20, p=0.3, bias=0.4, seed=4))
    assert a.parents == b.parents


def test_evidence_sampling():
    net = generate(GenSpec(method=TWO, n=20, p=0.2, bias=0.0, seed=3))
    e = sample_evidence(net, net.leaves(), np.random.default_rng(0))
    assert eliminate(net, e).value > 0
    # A is never in state 1, and the stand-in generator always asks for it
    never = make_network([("A", 2, [], [1.0, 0.0])])
    with pytest.raises(EvidenceSamplingError):
        sample_evidence(never, [0], _Always(1), max_tries=3)


class _Always:
    """Generator stand-in that always draws the same state."""

    def __init__(self, state):
        self.state = state

    def integers(self, *args, **kwargs):
        return self.state


def test_spec_validation():
    with pytest.raises(ValueError):
        GenSpec(method="three")
    with pytest.raises(ValueError):
        GenSpec(bias=0.7)
