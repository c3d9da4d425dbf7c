"""Variable elimination for Pr, MPE and MAP, plus the symbolic tools around it:
min-fill orders, widths, evaluation trees and MAP-order validity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (BayesianNetwork, ModelError, Potential, Witness, maximize_out,
                    multiply_all, sum_out)

DEFAULT_CELL_BUDGET = 2 ** 26

PR, MPE, MAP = "pr", "mpe", "map"


class OrderError(ValueError):
    pass


class ResourceLimitError(RuntimeError):
    """An elimination step or cluster would exceed the cell budget."""


@dataclass
class WidthReport:
    width: float
    largest_potential_scope: list[int]
    per_step_sizes: list[int]


@dataclass
class EliminationResult:
    value: float
    log_value: float
    assignment: dict[int, int] | None
    zero: bool = False

    def __iter__(self):
        # allows ``value, assignment = eliminate(...)``
        yield self.value
        yield self.assignment


@dataclass
class EvaluationTree:
    """One internal node per eliminated variable.

    ``children[x]`` lists the eliminated variables whose output potentials
    were multiplied when ``x`` was eliminated; ``leaves[x]`` the CPT families
    (by child variable id) consumed at that step.
    """

    order: list[int]
    children: dict[int, list[int]] = field(default_factory=dict)
    leaves: dict[int, list[int]] = field(default_factory=dict)
    scopes: dict[int, frozenset[int]] = field(default_factory=dict)

    def parent_of(self) -> dict[int, int]:
        up = {}
        for x, kids in self.children.items():
            for k in kids:
                up[k] = x
        return up

    def respects(self, order: Sequence[int]) -> bool:
        pos = {v: i for i, v in enumerate(order)}
        return all(pos[k] < pos[x] for x, kids in self.children.items() for k in kids)


def _check_permutation(net: BayesianNetwork, order: Sequence[int]) -> list[int]:
    order = [int(v) for v in order]
    if sorted(order) != list(range(net.n)):
        raise OrderError("elimination order must be a permutation of all variables")
    return order


def _step_width(cards: Iterable[int]) -> float:
    return sum(math.log2(c) for c in cards) - 1


def _as_width(value: float, binary: bool) -> float:
    return int(round(value)) if binary else value


def min_fill_order(net: BayesianNetwork, last: Iterable[int] = (), rng=None) -> list[int]:
    """Greedy min-fill over the moral graph.

    Variables in ``last`` only become eligible once everything else is gone.
    Ties go to the lowest variable id unless ``rng`` is given, in which case
    a tied candidate is drawn from it.
    """
    return min_fill_from_graph(net.moral_graph(), last, rng)


def min_fill_from_graph(adj: Sequence[set[int]], last: Iterable[int] = (), rng=None) -> list[int]:
    adj = [set(a) for a in adj]
    n = len(adj)
    last = set(last)
    alive = set(range(n))

    def fill(v):
        nb = list(adj[v])
        missing = 0
        for i, a in enumerate(nb):
            na = adj[a]
            for b in nb[i + 1:]:
                if b not in na:
                    missing += 1
        return missing

    fills = {v: fill(v) for v in range(n)}
    order = []
    while alive:
        pool = [v for v in alive if v not in last] or list(alive)
        best = min(fills[v] for v in pool)
        tied = sorted(v for v in pool if fills[v] == best)
        v = tied[0] if rng is None or len(tied) == 1 else tied[int(rng.integers(len(tied)))]
        order.append(v)
        nb = adj[v]
        touched = set(nb)
        for a in nb:
            adj[a].discard(v)
            adj[a] |= nb - {a}
        for a in nb:
            touched |= adj[a]
        adj[v] = set()
        alive.discard(v)
        del fills[v]
        for t in touched:
            if t in alive:
                fills[t] = fill(t)
    return order


def _simulate(net: BayesianNetwork, order: Sequence[int]):
    """Scope-only elimination; yields (var, product scope, consumed tags)."""
    pool: list[tuple[frozenset[int], tuple[str, int]]] = [
        (frozenset(net.family(v)), ("leaf", v)) for v in range(net.n)]
    for x in order:
        hit = [p for p in pool if x in p[0]]
        pool = [p for p in pool if x not in p[0]]
        scope = frozenset({x}).union(*[p[0] for p in hit]) if hit else frozenset({x})
        yield x, scope, [tag for _, tag in hit]
        pool.append((scope - {x}, ("node", x)))


def order_width(net: BayesianNetwork, order: Sequence[int]) -> WidthReport:
    order = _check_permutation(net, order)
    binary = all(c == 2 for c in net.cards)
    best, best_scope, sizes = -1.0, [], []
    for x, scope, _ in _simulate(net, order):
        cards = [net.card(v) for v in scope]
        sizes.append(math.prod(cards))
        w = _step_width(cards)
        if w > best:
            best, best_scope = w, sorted(scope)
    if not order:
        best = -1.0
    return WidthReport(_as_width(best, binary), best_scope, sizes)


def evaluation_tree(net: BayesianNetwork, order: Sequence[int]) -> EvaluationTree:
    order = _check_permutation(net, order)
    tree = EvaluationTree(list(order))
    for x, scope, tags in _simulate(net, order):
        tree.children[x] = [v for kind, v in tags if kind == "node"]
        tree.leaves[x] = [v for kind, v in tags if kind == "leaf"]
        tree.scopes[x] = scope
    return tree


def validate_map_order(net: BayesianNetwork, order: Sequence[int], q_vars: Iterable[int]) -> bool:
    """True iff every MAP-variable step multiplies potentials over MAP
    variables only, so maximization never has to commute with summation."""
    q = set(q_vars)
    try:
        order = _check_permutation(net, order)
    except OrderError:
        return False
    for x, scope, _ in _simulate(net, order):
        if x in q and not scope <= q:
            return False
    return True


def push_q_last(net: BayesianNetwork, order: Sequence[int], q_vars: Iterable[int]) -> list[int]:
    """Reorder a valid MAP order so the MAP variables come last without
    changing its evaluation tree (and therefore its width)."""
    q = set(q_vars)
    if not validate_map_order(net, order, q):
        raise OrderError("order not valid for MAP")
    tree = evaluation_tree(net, order)
    up = tree.parent_of()
    # validity means no MAP node hangs below a non-MAP node, so the non-MAP
    # nodes are closed under descendants and can all go first
    if any(parent not in q and child in q for child, parent in up.items()):
        raise AssertionError("evaluation tree puts a MAP node below a non-MAP node")
    pos = {v: i for i, v in enumerate(order)}
    out = sorted(order, key=lambda v: (v in q, pos[v]))
    if not tree.respects(out):
        raise AssertionError("reordering broke the evaluation tree partial order")
    w_in, w_out = order_width(net, order).width, order_width(net, out).width
    if w_in != w_out:
        raise AssertionError(f"width changed from {w_in} to {w_out}")
    return out


def _pool(net: BayesianNetwork, e: Mapping[int, int]) -> list[Potential]:
    pool = list(net.cpts)
    for v, s in sorted(e.items()):
        pool.append(Potential.indicator(v, net.card(v), s))
    return pool


def eliminate(net: BayesianNetwork, e: Mapping[int, int] | None = None, order: Sequence[int] | None = None,
              mode: str = PR, q_vars: Iterable[int] = (),
              cell_budget: int = DEFAULT_CELL_BUDGET) -> EliminationResult:
    """Run variable elimination.

    ``mode`` is ``"pr"`` (probability of evidence), ``"mpe"`` or ``"map"``.
    Evidence variables stay in the order; their indicators zero out
    incompatible cells.  For MPE/MAP they are maximized like MAP variables,
    which is harmless because the indicator leaves a single live state.
    Without an explicit order a min-fill order is used (MAP variables and
    evidence constrained last for ``"map"``).
    """
    e = dict(e or {})
    net.check_instantiation(e)
    q = set(q_vars)
    if mode == MAP:
        if q & set(e):
            raise ModelError("MAP variables overlap the evidence")
        max_vars = q | set(e)
    elif mode == MPE:
        max_vars = set(range(net.n))
    elif mode == PR:
        max_vars = set()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if order is None:
        order = min_fill_order(net, last=max_vars if mode == MAP else ())
    order = _check_permutation(net, order)
    if mode == MAP and not validate_map_order(net, order, max_vars):
        raise OrderError("order not valid for MAP")

    pool = _pool(net, e)
    witnesses: list[Witness] = []
    for x in order:
        hit = [p for p in pool if x in p.scope]
        if not hit:
            continue
        pool = [p for p in pool if x not in p.scope]
        scope = set().union(*[p.scope for p in hit])
        cells = math.prod(net.card(v) for v in scope)
        if cells > cell_budget:
            names = sorted(net.variables[v].name for v in scope)
            raise ResourceLimitError(f"eliminating {net.variables[x].name!r} needs {cells} cells "
                                     f"over {names}")
        prod = multiply_all(hit)
        if x in max_vars:
            reduced, wit = maximize_out(prod, [x])
            witnesses.append(wit)
        else:
            reduced = sum_out(prod, [x])
        pool.append(reduced)
    log_value = float(sum(p.log_scalar() for p in pool))
    if log_value == -math.inf:
        return EliminationResult(0.0, log_value, {} if mode != PR else None, zero=True)
    value = math.exp(log_value)
    if mode == PR:
        return EliminationResult(value, log_value, None)
    assignment: dict[int, int] = {}
    for wit in reversed(witnesses):
        assignment.update(wit.lookup(assignment))
    keep = q if mode == MAP else set(range(net.n)) - set(e)
    return EliminationResult(value, log_value, {v: assignment[v] for v in sorted(keep)})


def probability(net: BayesianNetwork, e: Mapping[int, int] | None = None, order=None) -> float:
    return eliminate(net, e, order, PR).value


def log_probability(net: BayesianNetwork, e: Mapping[int, int] | None = None, order=None) -> float:
    return eliminate(net, e, order, PR).log_value


def width_profile(net: BayesianNetwork, q_schedule: Sequence[Iterable[int]], rng=None) -> list[WidthReport]:
    """Constrained min-fill width for each MAP set in ``q_schedule``."""
    adj = net.moral_graph()
    out = []
    for q in q_schedule:
        order = min_fill_from_graph(adj, set(q), rng)
        out.append(order_width(net, order))
    return out


def weighted_mean_width(widths: Sequence[float]) -> float:
    """log2 of the mean of 2**w: averages complexity rather than width."""
    widths = np.asarray(widths, dtype=float)
    top = widths.max()
    return float(top + np.log2(np.mean(np.exp2(widths - top))))


def width_summary(widths: Sequence[float]) -> dict:
    w = np.asarray(widths, dtype=float)
    return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean()),
            "weighted_mean": weighted_mean_width(w)}


def width_study(nets: Sequence[BayesianNetwork], sizes: Sequence[int], seed: int = 0) -> list[dict]:
    """Grow a random MAP set one variable at a time on each network and
    record the constrained width at each requested set size.

    Returns one row per size with the per-network widths and their summary.
    """
    per_size: dict[int, list[float]] = {k: [] for k in sizes}
    for i, net in enumerate(nets):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        perm = [int(v) for v in rng.permutation(net.n)]
        reports = width_profile(net, [perm[:k] for k in sizes])
        for k, rep in zip(sizes, reports):
            per_size[k].append(rep.width)
    return [{"size": k, "widths": per_size[k], **width_summary(per_size[k])} for k in sizes]
