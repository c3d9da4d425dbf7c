"""Shenoy-Shafer jointree propagation with evidence indicators.

One propagation yields, for every variable X, the table
``x -> Pr(x, evidence without X)`` (the derivative of the evidence
probability with respect to X's indicators).  With the current search state
entered as evidence those tables are exactly the neighbor scores.

Messages are kept in linear space, each normalized to a maximum of one with
its log scale carried alongside, so products over many families never
underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .elimination import DEFAULT_CELL_BUDGET, ResourceLimitError, min_fill_order
from .model import BayesianNetwork, ImpossibleEvidenceError, ModelError
from .search import Evaluation


@dataclass
class Jointree:
    net: BayesianNetwork
    clusters: list[tuple[int, ...]]          # sorted variable ids
    edges: list[tuple[int, int]]
    separators: dict[tuple[int, int], tuple[int, ...]]
    cpt_host: list[int]                      # cluster index per CPT
    indicator_host: list[int]                # cluster index per variable
    tables: list[np.ndarray]                 # product of assigned CPTs, linear
    neighbors: list[list[int]]
    schedule: list[tuple[int, int]]          # collect then distribute

    @property
    def max_cluster_size(self) -> int:
        return max(len(c) for c in self.clusters)

    def separator(self, i: int, j: int) -> tuple[int, ...]:
        return self.separators[(i, j) if (i, j) in self.separators else (j, i)]

    def has_running_intersection(self) -> bool:
        """Every variable's clusters induce a connected subtree."""
        for v in range(self.net.n):
            holders = {i for i, c in enumerate(self.clusters) if v in c}
            if not holders:
                return False
            start = next(iter(holders))
            seen, stack = {start}, [start]
            while stack:
                i = stack.pop()
                for j in self.neighbors[i]:
                    if j in holders and j not in seen:
                        seen.add(j)
                        stack.append(j)
            if seen != holders:
                return False
        return True


def build_jointree(net: BayesianNetwork, order: Sequence[int] | None = None,
                   cell_budget: int = DEFAULT_CELL_BUDGET) -> Jointree:
    """Cluster tree from an elimination order (min-fill by default).

    Each step contributes the cluster {X} + its neighbors in the elimination
    graph, linked to the cluster of the earliest-eliminated of those
    neighbors.  Clusters contained in a tree neighbor are then merged away.
    """
    if order is None:
        order = min_fill_order(net)
    order = [int(v) for v in order]
    if sorted(order) != list(range(net.n)):
        raise ModelError("elimination order must be a permutation of all variables")
    pos = {v: i for i, v in enumerate(order)}
    adj = net.moral_graph()
    raw: list[set[int]] = []
    link: list[int | None] = []
    for x in order:
        nb = adj[x]
        raw.append({x} | nb)
        for a in nb:
            adj[a].discard(x)
            adj[a] |= nb - {a}
        adj[x] = set()
        link.append(pos[min(nb, key=pos.__getitem__)] if nb else None)

    # tree over raw clusters; forest roots get chained by empty separators
    nbrs: dict[int, set[int]] = {i: set() for i in range(len(raw))}
    roots = []
    for i, j in enumerate(link):
        if j is None:
            roots.append(i)
        else:
            nbrs[i].add(j)
            nbrs[j].add(i)
    for a, b in zip(roots, roots[1:]):
        nbrs[a].add(b)
        nbrs[b].add(a)

    # merge clusters contained in a neighbor
    alive = set(nbrs)
    changed = True
    while changed:
        changed = False
        for i in sorted(alive):
            for j in sorted(nbrs[i]):
                if raw[i] <= raw[j]:
                    for k in nbrs[i] - {j}:
                        nbrs[k].discard(i)
                        nbrs[k].add(j)
                        nbrs[j].add(k)
                    nbrs[j].discard(i)
                    del nbrs[i]
                    alive.discard(i)
                    changed = True
                    break
            if changed:
                break

    keep = sorted(alive)
    remap = {old: new for new, old in enumerate(keep)}
    clusters = [tuple(sorted(raw[i])) for i in keep]
    for c in clusters:
        cells = math.prod(net.card(v) for v in c)
        if cells > cell_budget:
            names = [net.variables[v].name for v in c]
            raise ResourceLimitError(f"cluster over {names} needs {cells} cells")
    neighbors = [sorted(remap[j] for j in nbrs[i]) for i in keep]
    edges = sorted({(min(i, j), max(i, j)) for i in range(len(keep)) for j in neighbors[i]})
    separators = {(i, j): tuple(sorted(set(clusters[i]) & set(clusters[j]))) for i, j in edges}

    def host(scope):
        scope = set(scope)
        best = None
        for i, c in enumerate(clusters):
            if scope <= set(c) and (best is None or len(c) < len(clusters[best])):
                best = i
        if best is None:
            raise AssertionError(f"no cluster contains {sorted(scope)}")
        return best

    cpt_host = [host(net.family(v)) for v in range(net.n)]
    indicator_host = [host((v,)) for v in range(net.n)]
    tables = []
    for i, c in enumerate(clusters):
        t = np.ones([net.card(v) for v in c])
        for v in range(net.n):
            if cpt_host[v] == i:
                t = t * _expand(net.cpt_array(v), net.family(v), c)
        tables.append(t)

    # rooted at cluster 0: post-order collect, pre-order distribute
    collect: list[tuple[int, int]] = []
    seen = {0}
    stack = [(0, iter(neighbors[0]))]
    while stack:
        node, it = stack[-1]
        nxt = next((j for j in it if j not in seen), None)
        if nxt is None:
            stack.pop()
            if stack:
                collect.append((node, stack[-1][0]))
        else:
            seen.add(nxt)
            stack.append((nxt, iter(neighbors[nxt])))
    if len(seen) != len(clusters):
        raise AssertionError("jointree is disconnected")
    schedule = collect + [(j, i) for i, j in reversed(collect)]
    return Jointree(net, clusters, edges, separators, cpt_host, indicator_host, tables,
                    neighbors, schedule)


def _expand(arr: np.ndarray, scope: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Broadcast ``arr`` (axes ``scope``) against sorted ``target`` axes."""
    cards = dict(zip(scope, arr.shape))
    arr = np.transpose(arr, sorted(range(len(scope)), key=lambda k: scope[k]))
    return arr.reshape([cards.get(v, 1) for v in target])


@dataclass
class Propagation:
    """Result of one two-phase pass: per-variable log tables and the count
    of messages sent."""

    log_tables: dict[int, np.ndarray]
    messages: int
    evidence: dict[int, int]

    def log_evidence(self) -> float:
        """log Pr(evidence), read off any target's table."""
        v, table = next(iter(self.log_tables.items()))
        if v in self.evidence:
            return float(table[self.evidence[v]])
        m = table.max()
        if m == -math.inf:
            return -math.inf
        return float(m + math.log(np.exp(table - m).sum()))


class JointreeEngine:
    """Reusable propagation over a fixed jointree.  Each ``propagate`` call
    owns its message store, so one engine can serve concurrent callers."""

    def __init__(self, jt: Jointree):
        self.jt = jt
        net = jt.net
        self._ind_axes = []
        for v in range(net.n):
            c = jt.clusters[jt.indicator_host[v]]
            shape = [1] * len(c)
            shape[c.index(v)] = net.card(v)
            self._ind_axes.append(tuple(shape))
        self._hosted: list[list[int]] = [[] for _ in jt.clusters]
        for v, h in enumerate(jt.indicator_host):
            self._hosted[h].append(v)
        self._sum_axes = {}
        self._msg_shape = {}
        for i, j in jt.schedule:
            ci, cj = jt.clusters[i], jt.clusters[j]
            sep = set(jt.separator(i, j))
            self._sum_axes[(i, j)] = tuple(k for k, v in enumerate(ci) if v not in sep)
            self._msg_shape[(i, j)] = tuple(jt.net.card(v) if v in sep else 1 for v in cj)
        self.propagations = 0
        self.messages_sent = 0

    def _local(self, i: int, lam: Sequence[np.ndarray], skip_var: int | None = None) -> np.ndarray:
        t = self.jt.tables[i]
        for v in self._hosted[i]:
            if v != skip_var and lam[v] is not None:
                t = t * lam[v].reshape(self._ind_axes[v])
        return t

    def propagate(self, evidence: Mapping[int, int], targets: Sequence[int] | None = None) -> Propagation:
        """Enter ``evidence`` and return log Pr(x, evidence - X) for each
        target variable X (all variables by default)."""
        jt, net = self.jt, self.jt.net
        lam: list[np.ndarray | None] = [None] * net.n
        for v, s in evidence.items():
            vec = np.zeros(net.card(v))
            vec[s] = 1.0
            lam[v] = vec
        msgs: dict[tuple[int, int], tuple[np.ndarray, float]] = {}
        sent = 0
        for i, j in jt.schedule:
            t = self._local(i, lam)
            scale = 0.0
            for k in jt.neighbors[i]:
                if k != j:
                    m, s = msgs[(k, i)]
                    t = t * m
                    scale += s
            out = t.sum(axis=self._sum_axes[(i, j)]) if self._sum_axes[(i, j)] else t
            out = out.reshape(self._msg_shape[(i, j)])
            top = out.max() if out.size else 0.0
            if top > 0:
                out = out / top
                scale += math.log(top)
            else:
                scale = -math.inf
            msgs[(i, j)] = (out, scale)
            sent += 1
        self.propagations += 1
        self.messages_sent += sent

        if targets is None:
            targets = range(net.n)
        by_host: dict[int, list[int]] = {}
        for v in targets:
            by_host.setdefault(jt.indicator_host[v], []).append(v)
        log_tables = {}
        for h, vs in by_host.items():
            base = jt.tables[h]
            scale = 0.0
            for k in jt.neighbors[h]:
                m, s = msgs[(k, h)]
                base = base * m
                scale += s
            c = jt.clusters[h]
            for v in vs:
                t = base
                for u in self._hosted[h]:
                    if u != v and lam[u] is not None:
                        t = t * lam[u].reshape(self._ind_axes[u])
                ax = c.index(v)
                proj = t.sum(axis=tuple(k for k in range(len(c)) if k != ax)) if len(c) > 1 else t
                proj = np.broadcast_to(proj, (net.card(v),))
                with np.errstate(divide="ignore"):
                    log_tables[v] = np.log(proj) + scale
        return Propagation(log_tables, sent, dict(evidence))


@dataclass
class NeighborScores:
    """``table[X][x]`` = log Pr(s - X, x, e); ``current`` = log Pr(s, e)."""

    current: float
    table: dict[int, np.ndarray]
    messages: int

    @property
    def current_score(self) -> float:
        return math.exp(self.current)

    def score(self, var: int, state: int) -> float:
        return math.exp(self.table[var][state])


def score_all_neighbors(jt: Jointree | JointreeEngine, s: Mapping[int, int], e: Mapping[int, int]) -> NeighborScores:
    """Current score and every single-flip neighbor score from one propagation."""
    if set(s) & set(e):
        raise ModelError("state and evidence must be disjoint")
    engine = jt if isinstance(jt, JointreeEngine) else JointreeEngine(jt)
    ev = dict(e)
    ev.update(s)
    targets = sorted(s) if s else [0] if engine.jt.net.n else []
    prop = engine.propagate(ev, targets=targets)
    current = prop.log_evidence() if targets else 0.0
    table = {v: prop.log_tables[v] for v in s}
    return NeighborScores(current, table, prop.messages)


class ExactScorer:
    """Search scorer backed by jointree propagation.

    ``evaluate`` returns log Pr(s, e) and log Pr(s - X, x, e) for every MAP
    variable X and state x.  Results are memoized per state; the search
    algorithms count evaluations themselves, so caching never changes the
    accounting.
    """

    approximate = False

    def __init__(self, net: BayesianNetwork, evidence: Mapping[int, int], map_vars: Sequence[int],
                 order: Sequence[int] | None = None, cache_size: int = 1 << 16):
        if set(evidence) & set(map_vars):
            raise ModelError("MAP variables overlap the evidence")
        self.net = net
        self.evidence = dict(evidence)
        self.map_vars = list(map_vars)
        self.cards = [net.card(v) for v in self.map_vars]
        self.engine = JointreeEngine(build_jointree(net, order))
        self._cache: dict[tuple, Evaluation] = {}
        self._cache_size = cache_size

    @property
    def propagations(self) -> int:
        return self.engine.propagations

    def evaluate(self, state: Sequence[int], known: float | None = None) -> Evaluation:
        key = tuple(int(x) for x in state)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ev = dict(self.evidence)
        ev.update(zip(self.map_vars, key))
        if self.map_vars:
            prop = self.engine.propagate(ev, targets=self.map_vars)
            tables = [prop.log_tables[v] for v in self.map_vars]
            current = float(tables[0][key[0]])
        else:
            prop = self.engine.propagate(ev, targets=[0])
            tables = []
            current = prop.log_evidence()
        out = Evaluation(current, tables)
        if len(self._cache) < self._cache_size:
            self._cache[key] = out
        return out

    def score(self, state: Sequence[int]) -> float:
        """Exact log Pr(s, e)."""
        return self.evaluate(state).score

    def posteriors(self, evidence: Mapping[int, int], targets: Sequence[int]) -> dict[int, np.ndarray]:
        """Pr(X | evidence) for each target from one propagation."""
        prop = self.engine.propagate(evidence, targets=list(targets) or [0])
        if prop.log_evidence() == -math.inf:
            raise ImpossibleEvidenceError()
        out = {}
        for v in targets:
            t = prop.log_tables[v]
            p = np.exp(t - t.max())
            out[v] = p / p.sum()
        return out

