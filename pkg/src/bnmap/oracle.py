"""Brute-force enumeration: the reference every engine is checked against."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .model import BayesianNetwork, ModelError, joint_probability

MAX_WORLDS = 2 ** 24


class OracleSizeError(ModelError):
    pass


@dataclass
class OracleResult:
    value: float
    assignment: dict[int, int]


def full_joint(net: BayesianNetwork, max_worlds: int = MAX_WORLDS) -> np.ndarray:
    """Joint distribution as an array with one axis per variable (id order)."""
    size = int(np.prod(net.cards, dtype=object))
    if size > max_worlds:
        raise OracleSizeError(f"{size} worlds exceed the enumeration guard of {max_worlds}")
    joint = np.ones(net.cards)
    for v in range(net.n):
        fam = net.family(v)
        shape = [1] * net.n
        for u in fam:
            shape[u] = net.card(u)
        # move the CPT axes into id order before broadcasting
        order = np.argsort(fam)
        joint = joint * np.transpose(net.cpt_array(v), order).reshape(shape)
    return joint


def _masked(net: BayesianNetwork, e: Mapping[int, int], max_worlds: int) -> np.ndarray:
    net.check_instantiation(e)
    joint = full_joint(net, max_worlds)
    for v, s in e.items():
        shape = [1] * net.n
        shape[v] = net.card(v)
        mask = np.zeros(net.card(v))
        mask[s] = 1.0
        joint = joint * mask.reshape(shape)
    return joint


def brute_force_pr(net: BayesianNetwork, e: Mapping[int, int] | None = None,
                   max_worlds: int = MAX_WORLDS) -> float:
    return float(_masked(net, e or {}, max_worlds).sum())


def brute_force_map(net: BayesianNetwork, e: Mapping[int, int] | None, q_vars: Sequence[int],
                    max_worlds: int = MAX_WORLDS) -> OracleResult:
    """max_q Pr(q, e) by summing every completion.  Ties go to the
    lexicographically smallest q (variables taken in id order)."""
    e = dict(e or {})
    q = sorted(set(q_vars))
    if set(q) & set(e):
        raise ModelError("MAP variables overlap the evidence")
    joint = _masked(net, e, max_worlds)
    rest = tuple(v for v in range(net.n) if v not in q)
    table = joint.sum(axis=rest) if rest else joint
    flat = int(np.argmax(table))
    value = float(table.flat[flat])
    states = np.unravel_index(flat, table.shape) if q else ()
    return OracleResult(value, {v: int(s) for v, s in zip(q, states)})


def brute_force_mpe(net: BayesianNetwork, e: Mapping[int, int] | None = None,
                    max_worlds: int = MAX_WORLDS) -> OracleResult:
    e = dict(e or {})
    return brute_force_map(net, e, [v for v in range(net.n) if v not in e], max_worlds)


def worlds(net: BayesianNetwork) -> Iterator[dict[int, int]]:
    for states in itertools.product(*(range(c) for c in net.cards)):
        yield dict(enumerate(states))


def enumerate_pr(net: BayesianNetwork, e: Mapping[int, int] | None = None) -> float:
    """Pr(e) by a plain loop over worlds; slow, independent of the array code."""
    e = dict(e or {})
    return sum(joint_probability(net, x) for x in worlds(net) if all(x[v] == s for v, s in e.items()))
