"""Loopy belief propagation and the BP-based neighbor scorer.

Every message on an edge U -> X lives over the parent U, in both
directions.  A node X with parents U computes

    to child Y:   alpha * sum_U lam_X P(X|U) prod_{Z != Y} M_ZX
    to parent U:  alpha * sum_{X, U - U} lam_X P(X|U) prod_{Z != U} M_ZX

Updates are sequential in two phases: in reverse variable order each node
sends to its neighbors that precede it, then in forward order to those that
follow it.  A sweep is both phases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import BayesianNetwork, ImpossibleEvidenceError, ModelError
from .search import Evaluation


class ContradictionError(ValueError):
    pass


ENGINES = ("auto", "numpy", "numba")


@dataclass
class BpConfig:
    """``engine`` picks the sweep implementation: ``numpy`` is the reference,
    ``numba`` a compiled equivalent, ``auto`` the compiled one if available."""

    tolerance: float = 1e-8
    max_sweeps: int = 100
    order: Sequence[int] | None = None
    engine: str = "auto"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown BP engine {self.engine!r}")


@dataclass
class MessageStore:
    net: BayesianNetwork
    evidence: dict[int, int]
    messages: dict[tuple[int, int], np.ndarray]
    sweeps: int = 0
    converged: bool = False
    residual: float = math.inf
    zero_messages: set = field(default_factory=set)

    @property
    def flagged(self) -> bool:
        return bool(self.zero_messages)

    def lam(self, v: int) -> np.ndarray:
        vec = np.ones(self.net.card(v))
        if v in self.evidence:
            vec[:] = 0.0
            vec[self.evidence[v]] = 1.0
        return vec


class _Graph:
    """Per-network structure cached across BP runs."""

    def __init__(self, net: BayesianNetwork, order: Sequence[int] | None):
        self.net = net
        self.order = list(order) if order is not None else list(net.topological_order())
        if sorted(self.order) != list(range(net.n)):
            raise ModelError("BP order must be a permutation of the variables")
        pos = {v: i for i, v in enumerate(self.order)}
        nbrs = [list(net.parents[v]) + list(net.children[v]) for v in range(net.n)]
        self.earlier = [[w for w in nbrs[v] if pos[w] < pos[v]] for v in range(net.n)]
        self.later = [[w for w in nbrs[v] if pos[w] > pos[v]] for v in range(net.n)]
        self._flat = None

    def flat(self):
        if self._flat is None:
            from ._bp_kernel import FlatNet
            self._flat = FlatNet(self.net, self.order, self.earlier, self.later)
        return self._flat


_graphs: dict[tuple[int, tuple | None], _Graph] = {}


def _graph(net: BayesianNetwork, order) -> _Graph:
    key = (id(net), tuple(order) if order is not None else None)
    g = _graphs.get(key)
    if g is None or g.net is not net:
        g = _Graph(net, order)
        if len(_graphs) > 64:
            _graphs.clear()
        _graphs[key] = g
    return g


def _prod(vectors, start: np.ndarray) -> np.ndarray:
    out = start
    for vec in vectors:
        out = out * vec
    return out


def _pi(store: MessageStore, x: int, skip: int | None = None, lam: np.ndarray | None = None) -> np.ndarray:
    """Sum over the parents of P(x | U) times the incoming parent messages
    (all but parent index ``skip``), optionally weighted by ``lam`` over x;
    the result lives over x, or over parent ``skip`` when one is skipped."""
    net = store.net
    ps = net.parents[x]
    k = len(ps)
    args: list = [net.cpt_array(x), list(range(k + 1))]
    for i, u in enumerate(ps):
        if i != skip:
            args += [store.messages[(u, x)], [i]]
    if lam is not None:
        args += [lam, [k]]
    args.append([k] if skip is None else [skip])
    return np.einsum(*args)


def _lambda_vector(store: MessageStore, x: int, skip_child: int | None = None,
                   with_evidence: bool = True) -> np.ndarray:
    start = store.lam(x) if with_evidence else np.ones(store.net.card(x))
    return _prod((store.messages[(y, x)] for y in store.net.children[x] if y != skip_child), start)


def _send(store: MessageStore, x: int, targets: Sequence[int]) -> float:
    """Send from ``x`` to each of ``targets``.  None of x's outgoing
    messages feeds another, so the shared products are computed once."""
    if not targets:
        return 0.0
    net = store.net
    change = 0.0
    pi = lam_all = None
    for to in targets:
        if to in net.children[x]:
            if pi is None:
                pi = _pi(store, x)
            raw = pi * _lambda_vector(store, x, skip_child=to)
        else:
            if lam_all is None:
                lam_all = _lambda_vector(store, x)
            raw = _pi(store, x, skip=net.parents[x].index(to), lam=lam_all)
        total = raw.sum()
        edge = (x, to)
        if total > 0:
            new = raw / total
            store.zero_messages.discard(edge)
        else:
            new = np.full(raw.shape, 1.0 / raw.size)
            store.zero_messages.add(edge)
        change = max(change, float(np.max(np.abs(new - store.messages[edge]))))
        store.messages[edge] = new
    return change


def bp_init(net: BayesianNetwork, e: Mapping[int, int]) -> MessageStore:
    net.check_instantiation(e)
    msgs = {}
    for x in range(net.n):
        for u in net.parents[x]:
            msgs[(u, x)] = np.ones(net.card(u))
            msgs[(x, u)] = np.ones(net.card(u))
    return MessageStore(net, dict(e), msgs)


def bp_sweep(store: MessageStore, config: BpConfig | None = None) -> float:
    """One two-phase sweep; returns the largest message change."""
    g = _graph(store.net, (config or BpConfig()).order)
    change = 0.0
    for x in reversed(g.order):
        change = max(change, _send(store, x, g.earlier[x]))
    for x in g.order:
        change = max(change, _send(store, x, g.later[x]))
    store.sweeps += 1
    store.residual = change
    return change


def bp_run(net: BayesianNetwork, e: Mapping[int, int] | None = None, config: BpConfig | None = None,
           init: MessageStore | None = None) -> MessageStore:
    """Sweep until the residual drops below the tolerance or the sweep cap
    is hit; ``converged`` records which.  ``init`` warm-starts from another
    store's messages instead of all ones."""
    config = config or BpConfig()
    store = bp_init(net, e or {})
    if _use_numba(config):
        flat = _graph(net, config.order).flat()
        pi, lam = flat.buffers(init.messages if init is not None else None)
        (store.messages, store.zero_messages, store.sweeps, store.converged,
         store.residual) = flat.run(store.evidence, pi, lam, config.tolerance, config.max_sweeps)
        return store
    if init is not None:
        store.messages = {k: v.copy() for k, v in init.messages.items()}
    for _ in range(config.max_sweeps):
        if bp_sweep(store, config) < config.tolerance:
            store.converged = True
            break
    return store


def _use_numba(config: BpConfig) -> bool:
    if config.engine == "numpy":
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        if config.engine == "numba":
            raise
        return False
    return True


def _belief(store: MessageStore, x: int, with_evidence: bool) -> np.ndarray:
    net = store.net
    b = _pi(store, x) * _lambda_vector(store, x, with_evidence=with_evidence)
    total = b.sum()
    if not total > 0:
        raise ContradictionError(f"contradictory evidence at {net.variables[x].name}")
    return b / total


def bp_marginal(store: MessageStore, x: int) -> np.ndarray:
    """Approximate Pr(X | e)."""
    return _belief(store, x, True)


def bp_retracted_marginal(store: MessageStore, x: int) -> np.ndarray:
    """Approximate Pr(X | e - X): the belief with X's own evidence left out."""
    return _belief(store, x, False)


@dataclass
class NeighborRatios:
    """``ratios[X][x]`` ~ Pr(x, s - X, e) / Pr(s, e); the self entry is 1.
    ``impossible`` lists variables whose current state got zero retracted
    mass; their other entries are +inf."""

    ratios: dict[int, np.ndarray]
    retracted: dict[int, np.ndarray]
    impossible: list[int]
    store: MessageStore


def _ratios_from_store(store: MessageStore, s: Mapping[int, int]) -> NeighborRatios:
    ratios, retracted, impossible = {}, {}, []
    for x, xs in s.items():
        r = bp_retracted_marginal(store, x)
        retracted[x] = r
        if r[xs] > 0:
            out = r / r[xs]
        else:
            impossible.append(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(r > 0, np.inf, 0.0)
        out[xs] = 1.0
        ratios[x] = out
    return NeighborRatios(ratios, retracted, impossible, store)


def bp_neighbor_ratios(net: BayesianNetwork, e: Mapping[int, int], s: Mapping[int, int],
                       config: BpConfig | None = None, init: MessageStore | None = None) -> NeighborRatios:
    if set(e) & set(s):
        raise ModelError("state and evidence must be disjoint")
    ev = dict(e)
    ev.update(s)
    store = bp_run(net, ev, config, init)
    return _ratios_from_store(store, s)


class BpScorer:
    """Scorer for local search when exact inference is out of reach.

    Scores are log Pr(s, e) estimates chained from neighbor ratios: a state
    reached as a neighbor inherits ``known`` from the caller, and its
    neighbors get ``known + log ratio``.  A state reached any other way
    (restart or random kick) is re-based on the last score seen, since no
    ratio links it to anything evaluated.  A state whose own value BP
    judges impossible is flagged.

    ``warm_start`` seeds each BP run with the previous run's messages.
    """

    approximate = True

    def __init__(self, net: BayesianNetwork, evidence: Mapping[int, int], map_vars: Sequence[int],
                 config: BpConfig | None = None, warm_start: bool = False):
        if set(evidence) & set(map_vars):
            raise ModelError("MAP variables overlap the evidence")
        self.net = net
        self.evidence = dict(evidence)
        self.map_vars = list(map_vars)
        self.cards = [net.card(v) for v in self.map_vars]
        self.config = config or BpConfig()
        self.warm_start = warm_start
        self._counters = [0, 0]  # BP runs, runs that hit the sweep cap
        self._last_store: MessageStore | None = None
        self._last_score = 0.0
        self._scores: dict[tuple, float] = {}
        self._ratio_cache: dict[tuple, NeighborRatios] = {}

    def fork(self) -> "BpScorer":
        """Fresh score chain sharing this scorer's cache of BP results.
        Sharing is sound only without warm starts, where a state's ratios
        do not depend on what ran before."""
        if self.warm_start:
            raise ValueError("cannot share BP results between warm-started scorers")
        other = BpScorer(self.net, self.evidence, self.map_vars, self.config)
        other._ratio_cache = self._ratio_cache
        other._counters = self._counters
        return other

    @property
    def runs(self) -> int:
        return self._counters[0]

    @property
    def nonconverged(self) -> int:
        return self._counters[1]

    def ratios(self, state: Sequence[int]) -> NeighborRatios:
        key = tuple(int(x) for x in state)
        hit = self._ratio_cache.get(key)
        if hit is not None:
            return hit
        init = self._last_store if self.warm_start else None
        nr = bp_neighbor_ratios(self.net, self.evidence, dict(zip(self.map_vars, key)), self.config, init)
        self._counters[0] += 1
        self._counters[1] += not nr.store.converged
        self._last_store = nr.store
        self._ratio_cache[key] = nr
        return nr

    def evaluate(self, state: Sequence[int], known: float | None = None) -> Evaluation:
        key = tuple(int(x) for x in state)
        nr = self.ratios(key)
        base = known if known is not None else self._scores.get(key, self._last_score)
        flagged = bool(nr.impossible) or nr.store.flagged
        if nr.impossible:
            # BP says the current state cannot happen: rank neighbors by raw
            # retracted mass and push the current state to the bottom
            neighbors = []
            for i, v in enumerate(self.map_vars):
                r = nr.retracted[v]
                with np.errstate(divide="ignore"):
                    neighbors.append(base + np.log(r / r.max()) if r.max() > 0 else np.full(r.shape, -np.inf))
            score = -math.inf
        else:
            with np.errstate(divide="ignore"):
                neighbors = [base + np.log(nr.ratios[v]) for v in self.map_vars]
            score = base
        self._scores.setdefault(key, score)
        self._last_score = base
        return Evaluation(score, neighbors, flagged)

    def score(self, state: Sequence[int]) -> float:
        key = tuple(int(x) for x in state)
        if key not in self._scores:
            self.evaluate(key)
        return self._scores[key]

    def posteriors(self, evidence: Mapping[int, int], targets: Sequence[int]) -> dict[int, np.ndarray]:
        store = bp_run(self.net, evidence, self.config)
        self._counters[0] += 1
        self._counters[1] += not store.converged
        try:
            return {v: bp_marginal(store, v) for v in targets}
        except ContradictionError as exc:
            raise ImpossibleEvidenceError(str(exc)) from exc


def bp_search_scorer(net: BayesianNetwork, e: Mapping[int, int], map_vars: Sequence[int],
                     config: BpConfig | None = None, warm_start: bool = False) -> BpScorer:
    return BpScorer(net, e, map_vars, config, warm_start)
