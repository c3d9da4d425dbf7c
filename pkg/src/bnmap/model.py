"""Discrete Bayesian networks and the potential algebra used by every engine.

Potentials keep their values as natural logarithms with ``-inf`` standing for
an exact zero.  Tables are dense numpy arrays whose axes follow the scope
order, so a C-order flatten puts the last scope variable fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Instantiation = dict  # variable id -> state index

ROW_TOLERANCE = 1e-9
# rows off by less than this are left untouched so emit/parse stays idempotent
_RENORM_FLOOR = 1e-12


class ModelError(ValueError):
    """Raised for malformed networks, potentials or instantiations."""


class ImpossibleEvidenceError(ValueError):
    """The evidence has probability zero."""

    def __init__(self, msg: str = "impossible evidence"):
        super().__init__(msg)


def _log(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(values)


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """log(sum(exp(a))) along ``axis``; all ``-inf`` slices stay ``-inf``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.full(np.sum(a, axis=axis).shape, -np.inf) if axis is not None else -np.inf
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", under="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    cardinality: int
    state_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.cardinality < 2:
            raise ModelError(f"variable {self.name!r} needs at least 2 states")
        if self.state_names is not None and len(self.state_names) != self.cardinality:
            raise ModelError(f"variable {self.name!r}: {len(self.state_names)} state names "
                             f"for cardinality {self.cardinality}")

    def state_index(self, token: str) -> int:
        if self.state_names is not None and token in self.state_names:
            return self.state_names.index(token)
        try:
            idx = int(token)
        except ValueError:
            raise ModelError(f"unknown state {token!r} for variable {self.name!r}") from None
        if not 0 <= idx < self.cardinality:
            raise ModelError(f"state {idx} out of range for variable {self.name!r}")
        return idx

    def state_label(self, idx: int) -> str:
        return self.state_names[idx] if self.state_names is not None else str(idx)


class Potential:
    """Nonnegative table over an ordered scope, stored as logs."""

    __slots__ = ("scope", "cards", "logv")

    def __init__(self, scope: Sequence[int], cards: Sequence[int], logv: np.ndarray):
        scope = tuple(int(v) for v in scope)
        cards = tuple(int(c) for c in cards)
        if len(set(scope)) != len(scope):
            raise ModelError(f"duplicate variable in scope {scope}")
        if len(scope) != len(cards):
            raise ModelError("scope and cardinalities differ in length")
        logv = np.asarray(logv, dtype=float)
        if logv.size != math.prod(cards):
            raise ModelError(f"table has {logv.size} cells, scope needs {math.prod(cards)}")
        self.scope = scope
        self.cards = cards
        self.logv = logv.reshape(cards)

    @classmethod
    def from_values(cls, scope, cards, values) -> "Potential":
        values = np.asarray(values, dtype=float)
        if np.any(values < 0):
            raise ModelError("potential values must be nonnegative")
        return cls(scope, cards, _log(values))

    @classmethod
    def unit(cls) -> "Potential":
        return cls((), (), np.zeros(()))

    @classmethod
    def indicator(cls, var: int, card: int, state: int) -> "Potential":
        lam = np.full(card, -np.inf)
        lam[state] = 0.0
        return cls((var,), (card,), lam)

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.logv)

    @property
    def size(self) -> int:
        return self.logv.size

    def card_of(self, var: int) -> int:
        return self.cards[self.scope.index(var)]

    def scalar(self) -> float:
        """Linear value of a scope-free potential."""
        if self.scope:
            raise ModelError("potential is not a scalar")
        return float(np.exp(self.logv))

    def log_scalar(self) -> float:
        if self.scope:
            raise ModelError("potential is not a scalar")
        return float(self.logv)

    def aligned(self, scope: Sequence[int]) -> np.ndarray:
        """Log table transposed/expanded so it broadcasts against ``scope``."""
        perm = [self.scope.index(v) for v in scope if v in self.scope]
        arr = np.transpose(self.logv, perm) if perm != list(range(len(perm))) else self.logv
        shape = [self.cards[self.scope.index(v)] if v in self.scope else 1 for v in scope]
        return arr.reshape(shape)

    def __mul__(self, other: "Potential") -> "Potential":
        return multiply(self, other)

    def __repr__(self) -> str:
        return f"Potential(scope={self.scope}, cells={self.size})"


def multiply(p1: Potential, p2: Potential) -> Potential:
    """Pointwise product; the scope is p1's followed by p2's new variables."""
    new = [v for v in p2.scope if v not in p1.scope]
    scope = p1.scope + tuple(new)
    cards = p1.cards + tuple(p2.card_of(v) for v in new)
    for v in p2.scope:
        if v in p1.scope and p1.card_of(v) != p2.card_of(v):
            raise ModelError(f"cardinality mismatch on variable {v}")
    logv = p1.aligned(scope) + p2.aligned(scope)
    return Potential(scope, cards, np.broadcast_to(logv, cards))


def multiply_all(potentials: Iterable[Potential]) -> Potential:
    """Product of several potentials in one broadcast pass."""
    potentials = list(potentials)
    if not potentials:
        return Potential.unit()
    scope: list[int] = []
    cards: list[int] = []
    for p in potentials:
        for v, c in zip(p.scope, p.cards):
            if v not in scope:
                scope.append(v)
                cards.append(c)
    acc = np.zeros([1] * len(scope))
    for p in potentials:
        acc = acc + p.aligned(scope)
    return Potential(scope, cards, np.broadcast_to(acc, cards))


def _axes(p: Potential, vars: Iterable[int]) -> tuple[int, ...]:
    axes = []
    for v in vars:
        if v not in p.scope:
            raise ModelError(f"variable {v} not in scope {p.scope}")
        axes.append(p.scope.index(v))
    return tuple(sorted(axes))


def sum_out(p: Potential, vars: Iterable[int]) -> Potential:
    axes = _axes(p, vars)
    if not axes:
        return p
    keep = [i for i in range(len(p.scope)) if i not in axes]
    return Potential([p.scope[i] for i in keep], [p.cards[i] for i in keep],
                     logsumexp(p.logv, axis=axes))


@dataclass(frozen=True)
class Witness:
    """Argmax record of a maximization: ``states[cell]`` gives the winning
    state of each variable in ``eliminated`` for every cell of ``scope``."""

    scope: tuple[int, ...]
    eliminated: tuple[int, ...]
    states: np.ndarray  # shape = cards(scope) + (len(eliminated),)

    def lookup(self, assignment: Mapping[int, int]) -> dict[int, int]:
        idx = tuple(assignment[v] for v in self.scope)
        row = self.states[idx]
        return {v: int(s) for v, s in zip(self.eliminated, row)}


def maximize_out(p: Potential, vars: Iterable[int]) -> tuple[Potential, Witness]:
    """Max-marginalize ``vars``; ties go to the lexicographically smallest
    joint state with eliminated variables taken in ascending id order."""
    vars = sorted(set(vars))
    _axes(p, vars)
    keep = [v for v in p.scope if v not in vars]
    arr = p.aligned(keep + vars)
    kcards = [p.card_of(v) for v in keep]
    ecards = [p.card_of(v) for v in vars]
    flat = arr.reshape(kcards + [math.prod(ecards)])
    best = np.argmax(flat, axis=-1)
    maxv = np.take_along_axis(flat, best[..., None], axis=-1)[..., 0]
    if vars:
        states = np.stack(np.unravel_index(best, ecards), axis=-1)
    else:
        states = np.zeros(tuple(kcards) + (0,), dtype=np.intp)
    return (Potential(keep, kcards, maxv),
            Witness(tuple(keep), tuple(vars), states.reshape(tuple(kcards) + (len(vars),))))


def reduce_by_evidence(p: Potential, e: Mapping[int, int]) -> Potential:
    """Zero every cell incompatible with ``e``; the scope is unchanged."""
    hits = [v for v in p.scope if v in e]
    if not hits:
        return p
    logv = p.logv.copy()
    for v in hits:
        ax = p.scope.index(v)
        mask = np.ones(p.cards[ax], dtype=bool)
        mask[e[v]] = False
        index = [slice(None)] * len(p.scope)
        index[ax] = mask
        logv[tuple(index)] = -np.inf
    return Potential(p.scope, p.cards, logv)


def compatible(a: Mapping[int, int], b: Mapping[int, int]) -> bool:
    """Two instantiations are compatible iff they agree on shared variables."""
    return all(b[v] == s for v, s in a.items() if v in b)


class BayesianNetwork:
    """DAG of discrete variables with one CPT per variable.

    ``cpt_array(v)`` is the linear CPT with axes ``parents(v) + (v,)``.
    Instances are treated as immutable once built.
    """

    def __init__(self, variables: Sequence[Variable], parents: Sequence[Sequence[int]],
                 tables: Sequence[np.ndarray], name: str = "net"):
        self.name = name
        self.variables = tuple(variables)
        n = len(self.variables)
        for i, var in enumerate(self.variables):
            if var.id != i:
                raise ModelError("variable ids must be contiguous 0..n-1")
        if len(parents) != n or len(tables) != n:
            raise ModelError("need one parent list and one table per variable")
        self.parents = tuple(tuple(int(u) for u in ps) for ps in parents)
        for v, ps in enumerate(self.parents):
            if len(set(ps)) != len(ps) or v in ps or any(not 0 <= u < n for u in ps):
                raise ModelError(f"bad parent list for {self.variables[v].name!r}")
        self._topo = self._toposort()
        arrays = []
        for v, tab in enumerate(tables):
            shape = tuple(self.card(u) for u in self.parents[v]) + (self.card(v),)
            arr = np.array(tab, dtype=float).reshape(shape)
            arrays.append(_check_rows(arr, self.variables[v].name))
        self._arrays = tuple(arrays)
        for a in self._arrays:
            a.flags.writeable = False
        self.cpts = tuple(Potential(self.parents[v] + (v,), a.shape, _log(a))
                          for v, a in enumerate(self._arrays))
        children: list[list[int]] = [[] for _ in range(n)]
        for v, ps in enumerate(self.parents):
            for u in ps:
                children[u].append(v)
        self.children = tuple(tuple(c) for c in children)
        self._by_name = {var.name: var.id for var in self.variables}
        if len(self._by_name) != n:
            raise ModelError("variable names must be unique")

    def _toposort(self) -> tuple[int, ...]:
        n = len(self.variables)
        indeg = [len(ps) for ps in self.parents]
        kids: list[list[int]] = [[] for _ in range(n)]
        for v, ps in enumerate(self.parents):
            for u in ps:
                kids[u].append(v)
        ready = [v for v in range(n) if indeg[v] == 0]
        out = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            for c in kids[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(out) != n:
            raise ModelError("parent graph has a cycle")
        return tuple(out)

    @property
    def n(self) -> int:
        return len(self.variables)

    def card(self, v: int) -> int:
        return self.variables[v].cardinality

    @property
    def cards(self) -> tuple[int, ...]:
        return tuple(var.cardinality for var in self.variables)

    def cpt_array(self, v: int) -> np.ndarray:
        return self._arrays[v]

    def family(self, v: int) -> tuple[int, ...]:
        return self.parents[v] + (v,)

    def topological_order(self) -> tuple[int, ...]:
        return self._topo

    def roots(self) -> list[int]:
        return [v for v in range(self.n) if not self.parents[v]]

    def leaves(self) -> list[int]:
        return [v for v in range(self.n) if not self.children[v]]

    def index(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def check_instantiation(self, x: Mapping[int, int]) -> None:
        for v, s in x.items():
            if not 0 <= v < self.n:
                raise ModelError(f"unknown variable id {v}")
            if not 0 <= s < self.card(v):
                raise ModelError(f"state {s} out of range for {self.variables[v].name!r}")

    def moral_graph(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for v in range(self.n):
            fam = self.family(v)
            for a in fam:
                for b in fam:
                    if a != b:
                        adj[a].add(b)
        return adj

    def skeleton(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for v, ps in enumerate(self.parents):
            for u in ps:
                adj[u].add(v)
                adj[v].add(u)
        return adj

    def is_polytree(self) -> bool:
        """True iff the undirected skeleton has no cycle."""
        edges = sum(len(ps) for ps in self.parents)
        comps = _components(self.skeleton())
        return edges == self.n - comps

    def __repr__(self) -> str:
        return f"BayesianNetwork({self.name!r}, n={self.n})"


def _components(adj: Sequence[set[int]]) -> int:
    seen = [False] * len(adj)
    count = 0
    for s in range(len(adj)):
        if seen[s]:
            continue
        count += 1
        stack = [s]
        seen[s] = True
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
    return count


def _check_rows(arr: np.ndarray, name: str) -> np.ndarray:
    if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise ModelError(f"CPT of {name!r} has entries outside [0, 1]")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0)
    if np.any(bad > ROW_TOLERANCE):
        row = np.unravel_index(int(np.argmax(bad)), sums.shape)
        raise ModelError(f"CPT of {name!r}: row {row} sums to {sums[row]!r}")
    fix = bad > _RENORM_FLOOR
    if np.any(fix):
        arr = arr.copy()
        arr[fix] = arr[fix] / sums[fix][..., None]
    return arr


def log_joint_probability(net: BayesianNetwork, x: Mapping[int, int]) -> float:
    missing = [v for v in range(net.n) if v not in x]
    if missing:
        raise ModelError("incomplete world")
    net.check_instantiation(x)
    total = 0.0
    for v in range(net.n):
        idx = tuple(x[u] for u in net.family(v))
        theta = net.cpt_array(v)[idx]
        if theta == 0.0:
            return -math.inf
        total += math.log(theta)
    return total


def joint_probability(net: BayesianNetwork, x: Mapping[int, int]) -> float:
    """Product of the CPT entries compatible with the complete world ``x``."""
    missing = [v for v in range(net.n) if v not in x]
    if missing:
        raise ModelError("incomplete world")
    net.check_instantiation(x)
    p = 1.0
    for v in range(net.n):
        p *= float(net.cpt_array(v)[tuple(x[u] for u in net.family(v))])
    return p


def make_network(spec: Sequence[tuple], name: str = "net") -> BayesianNetwork:
    """Build a network from ``(name, cardinality, parent_names, table)`` rows.

    Tables are nested/flat sequences with the child varying fastest.
    Convenient for fixtures.
    """
    names = [row[0] for row in spec]
    variables = []
    for i, row in enumerate(spec):
        states = tuple(row[4]) if len(row) > 4 and row[4] is not None else None
        variables.append(Variable(i, row[0], row[1], states))
    parents = [[names.index(p) for p in row[2]] for row in spec]
    return BayesianNetwork(variables, parents, [np.asarray(row[3], dtype=float) for row in spec], name)


@dataclass
class NetworkBuilder:
    """Incremental construction for generated and reduced networks."""

    name: str = "net"
    variables: list[Variable] = field(default_factory=list)
    parents: list[list[int]] = field(default_factory=list)
    tables: list[np.ndarray] = field(default_factory=list)

    def add(self, name: str, card: int, parents: Sequence[int], table,
            states: Sequence[str] | None = None) -> int:
        vid = len(self.variables)
        self.variables.append(Variable(vid, name, card, tuple(states) if states else None))
        self.parents.append(list(parents))
        self.tables.append(np.asarray(table, dtype=float))
        return vid

    def build(self) -> BayesianNetwork:
        return BayesianNetwork(self.variables, self.parents, self.tables, self.name)
