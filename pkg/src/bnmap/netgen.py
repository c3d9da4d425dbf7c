"""Random network generation: two structure methods and bias quantification.

Randomness comes from numpy's PCG64.  A seed is expanded with
``SeedSequence(seed).spawn(2)``: child 0 drives the structure, child 1 the
CPT values, so changing the bias never changes the structure drawn for a
seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .elimination import eliminate
from .model import BayesianNetwork, NetworkBuilder

ONE, TWO = "one", "two"


class EvidenceSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenSpec:
    method: str = TWO
    n: int = 100
    c: int = 12
    p: float = 0.25
    bias: float = 0.5
    seed: int = 0
    max_parents: int | None = None

    def __post_init__(self):
        if self.method not in (ONE, TWO):
            raise ValueError(f"unknown generation method {self.method!r}")
        if self.n < 1:
            raise ValueError("need at least one variable")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("edge probability must lie in [0, 1]")
        if self.c < 1:
            raise ValueError("connectivity must be at least 1")
        if not 0.0 <= self.bias <= 0.5:
            raise ValueError("bias must lie in [0, 0.5]")


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def gen_structure(spec: GenSpec, rng: np.random.Generator | None = None) -> list[list[int]]:
    """Parent lists over variables 0..n-1, every edge pointing forward.

    TWO: each pair (i, j), i < j, is an edge with probability ``p``.
    ONE: variable i draws its parent count uniformly from
    0..min(max_parents, i, c) and takes that many distinct parents from the
    ``c`` variables immediately before it.  Keeping parents inside that
    window bounds the width by about ``c``; the random parent count leaves
    a share of root variables.
    """
    if rng is None:
        rng = _streams(spec.seed)[0]
    n = spec.n
    parents: list[list[int]] = [[] for _ in range(n)]
    if spec.method == TWO:
        for j in range(n):
            draws = rng.random(j)
            parents[j] = [i for i in range(j) if draws[i] < spec.p]
        return parents
    cap = spec.max_parents if spec.max_parents is not None else max(1, (spec.c + 3) // 3)
    for i in range(n):
        lo = max(0, i - spec.c)
        window = np.arange(lo, i)
        k = int(rng.integers(min(cap, len(window)) + 1))
        parents[i] = sorted(int(u) for u in rng.choice(window, size=k, replace=False)) if k else []
    return parents


def quantify_bias(parents: Sequence[Sequence[int]], bias: float, rng: np.random.Generator,
                  name: str = "random") -> BayesianNetwork:
    """Binary CPTs.  Root rows are (u, 1 - u) with u uniform; every other
    row gives one state v ~ U[0, bias) and the other 1 - v, the favoured
    state picked by a fair coin per row."""
    if not 0.0 <= bias <= 0.5:
        raise ValueError("bias must lie in [0, 0.5]")
    b = NetworkBuilder(name)
    for v, ps in enumerate(parents):
        rows = 2 ** len(ps)
        if not ps:
            u = rng.random()
            table = np.array([u, 1.0 - u])
        else:
            small = rng.random(rows) * bias
            coin = rng.random(rows) < 0.5
            table = np.empty((rows, 2))
            table[:, 0] = np.where(coin, small, 1.0 - small)
            table[:, 1] = 1.0 - table[:, 0]
            table = table.reshape([2] * len(ps) + [2])
        b.add(f"v{v}", 2, ps, table)
    return b.build()


def generate(spec: GenSpec) -> BayesianNetwork:
    s_rng, q_rng = _streams(spec.seed)
    parents = gen_structure(spec, s_rng)
    return quantify_bias(parents, spec.bias, q_rng, name=f"{spec.method}-{spec.n}-{spec.seed}")


def sample_evidence(net: BayesianNetwork, candidates: Sequence[int], rng: np.random.Generator,
                    max_tries: int = 1000) -> dict[int, int]:
    """Uniform assignment to ``candidates`` redrawn until it has nonzero
    probability."""
    for _ in range(max_tries):
        e = {int(v): int(rng.integers(net.card(v))) for v in candidates}
        if not e or eliminate(net, e).value > 0.0:
            return e
    raise EvidenceSamplingError(f"no positive-probability evidence after {max_tries} draws")


def chain_polytree(n: int, name: str = "chain", rng: np.random.Generator | None = None) -> BayesianNetwork:
    """Binary S0 -> S1 -> ... -> Sn with an extra root parent Xi on each Si.

    Quantified at random when ``rng`` is given, uniform otherwise.
    """
    b = NetworkBuilder(name)
    ids: dict[str, int] = {}

    def table(k):
        if rng is None:
            return np.full([2] * k + [2], 0.5)
        u = rng.random([2] * k)
        return np.stack([u, 1.0 - u], axis=-1)

    ids["S0"] = b.add("S0", 2, [], table(0))
    for i in range(1, n + 1):
        ids[f"X{i}"] = b.add(f"X{i}", 2, [], table(0))
        ids[f"S{i}"] = b.add(f"S{i}", 2, [ids[f"X{i}"], ids[f"S{i-1}"]], table(2))
    return b.build()


def random_polytree(n: int, rng: np.random.Generator, max_card: int = 2) -> BayesianNetwork:
    """Random polytree: each new variable links to one earlier variable,
    the edge direction chosen by a coin flip."""
    parents: list[list[int]] = [[] for _ in range(n)]
    for v in range(1, n):
        u = int(rng.integers(v))
        if rng.random() < 0.5:
            parents[v].append(u)
        else:
            parents[u].append(v)
    # edges may now point backwards; relabel in topological order
    order = _topo(parents)
    relabel = {old: new for new, old in enumerate(order)}
    b = NetworkBuilder("polytree")
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    for old in order:
        ps = sorted(relabel[u] for u in parents[old])
        shape = [cards[order[p]] for p in ps]
        raw = rng.random(shape + [cards[old]]) + 0.05
        b.add(f"v{relabel[old]}", cards[old], ps, raw / raw.sum(axis=-1, keepdims=True))
    return b.build()


def _topo(parents: Sequence[Sequence[int]]) -> list[int]:
    n = len(parents)
    done: set[int] = set()
    out: list[int] = []

    def visit(v):
        if v in done:
            return
        done.add(v)
        for u in parents[v]:
            visit(u)
        out.append(v)

    for v in range(n):
        visit(v)
    return out


def random_network(n: int, p: float, rng: np.random.Generator, max_card: int = 2,
                   name: str = "random") -> BayesianNetwork:
    """Forward-edge random DAG with random (possibly non-binary) CPTs; test helper."""
    b = NetworkBuilder(name)
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    for v in range(n):
        ps = [u for u in range(v) if rng.random() < p]
        raw = rng.random([cards[u] for u in ps] + [cards[v]])
        b.add(f"v{v}", cards[v], ps, raw / raw.sum(axis=-1, keepdims=True))
    return b.build()
