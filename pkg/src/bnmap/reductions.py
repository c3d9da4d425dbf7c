"""Compilers from logical problems to MAP networks, plus brute-force
solvers for the source problems.

Binary network variables use state 0 = F and state 1 = T.  Thresholds are
exact ``Fraction`` values; a D-MAP instance answers yes when some MAP
instantiation has probability strictly above the threshold.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .model import BayesianNetwork, NetworkBuilder

AND, OR, NOT = "and", "or", "not"
TF = ("F", "T")


class ReductionError(ValueError):
    pass


# ---------------------------------------------------------------- formulas

@dataclass(frozen=True)
class CnfFormula:
    """Clauses of signed 1-based literals over variables 1..num_vars."""

    num_vars: int
    clauses: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(tuple(int(l) for l in c) for c in self.clauses))
        for c in self.clauses:
            if not c:
                raise ReductionError("empty clause")
            for lit in c:
                if lit == 0 or abs(lit) > self.num_vars:
                    raise ReductionError(f"literal {lit} out of range 1..{self.num_vars}")

    @property
    def m(self) -> int:
        return len(self.clauses)

    def satisfied(self, x: Sequence[bool]) -> list[bool]:
        """Per-clause satisfaction under assignment ``x`` (index i is var i+1)."""
        return [any(x[abs(l) - 1] == (l > 0) for l in c) for c in self.clauses]

    def count_satisfied(self, x: Sequence[bool]) -> int:
        return sum(self.satisfied(x))


def parse_dimacs(text: str) -> CnfFormula:
    n = m = None
    clauses: list[tuple[int, ...]] = []
    cur: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        if line.startswith("%"):
            break
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ReductionError(f"line {lineno}: bad problem line {line!r}")
            n, m = int(parts[2]), int(parts[3])
            continue
        if n is None:
            raise ReductionError(f"line {lineno}: clause before 'p cnf' header")
        try:
            lits = [int(t) for t in line.split()]
        except ValueError:
            raise ReductionError(f"line {lineno}: non-integer literal") from None
        for lit in lits:
            if lit == 0:
                clauses.append(tuple(cur))
                cur = []
            else:
                cur.append(lit)
    if n is None:
        raise ReductionError("missing 'p cnf' header")
    if cur:
        clauses.append(tuple(cur))
    if m is not None and len(clauses) != m:
        raise ReductionError(f"header promises {m} clauses, found {len(clauses)}")
    return CnfFormula(n, tuple(clauses))


def emit_dimacs(f: CnfFormula) -> str:
    lines = [f"p cnf {f.num_vars} {f.m}"]
    lines += [" ".join(str(l) for l in c) + " 0" for c in f.clauses]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Gate:
    op: str
    args: tuple[int, ...]


@dataclass
class BooleanCircuit:
    """Variables x1..xn and gates y1..ym in topological order; the last gate
    is the root.  A gate argument ``a`` names variable ``a`` when ``a < n``
    and gate ``a - n`` otherwise."""

    num_vars: int
    gates: list[Gate]
    var_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.var_names:
            self.var_names = [f"x{i + 1}" for i in range(self.num_vars)]
        if not self.gates:
            raise ReductionError("circuit needs at least one operator")
        for j, g in enumerate(self.gates):
            want = 1 if g.op == NOT else 2
            if g.op not in (AND, OR, NOT) or len(g.args) != want:
                raise ReductionError(f"gate {j + 1}: malformed {g.op} with {len(g.args)} operands")
            for a in g.args:
                if not 0 <= a < self.num_vars + j:
                    raise ReductionError(f"gate {j + 1}: operand {a} is not an earlier node")

    @property
    def m(self) -> int:
        return len(self.gates)

    @staticmethod
    def apply(op: str, vals: Sequence[bool]) -> bool:
        if op == AND:
            return vals[0] and vals[1]
        if op == OR:
            return vals[0] or vals[1]
        return not vals[0]

    def gate_values(self, x: Sequence[bool]) -> list[bool]:
        nodes = list(x)
        for g in self.gates:
            nodes.append(self.apply(g.op, [nodes[a] for a in g.args]))
        return nodes[self.num_vars:]

    def evaluate(self, x: Sequence[bool]) -> bool:
        return self.gate_values(x)[-1]


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(.))")


def parse_circuit(text: str, var_names: Sequence[str] | None = None) -> BooleanCircuit:
    """Parse an expression over ``~`` (not), ``&`` (and), ``|`` (or) and
    parentheses; binding is ~ tightest, then &, then |, and chains associate
    left so every gate has fan-in at most two.  Variables are numbered by
    ``var_names`` when given, else by sorted natural order of the names."""
    tokens = []
    for name, sym in _TOKEN.findall(text):
        if name:
            tokens.append(("id", name))
        elif sym.strip():
            if sym not in "~&|()!":
                raise ReductionError(f"unexpected character {sym!r}")
            tokens.append(("op", "~" if sym == "!" else sym))
    names = sorted({t for k, t in tokens if k == "id"}, key=_natural)
    if var_names is not None:
        missing = set(names) - set(var_names)
        if missing:
            raise ReductionError(f"unknown variables {sorted(missing)}")
        names = list(var_names)
    index = {v: i for i, v in enumerate(names)}
    gates: list[Gate] = []
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None)

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok[0] is None or (expected is not None and tok[1] != expected):
            raise ReductionError(f"expected {expected or 'operand'} at token {pos + 1}")
        pos += 1
        return tok

    def gate(op, args):
        gates.append(Gate(op, tuple(args)))
        return len(names) + len(gates) - 1

    def atom():
        kind, val = take()
        if kind == "id":
            return index[val]
        if val == "~":
            return gate(NOT, [atom()])
        if val == "(":
            node = disj()
            take(")")
            return node
        raise ReductionError(f"unexpected {val!r} at token {pos}")

    def conj():
        node = atom()
        while peek()[1] == "&":
            take()
            node = gate(AND, [node, atom()])
        return node

    def disj():
        node = conj()
        while peek()[1] == "|":
            take()
            node = gate(OR, [node, conj()])
        return node

    disj()
    if pos != len(tokens):
        raise ReductionError(f"trailing input at token {pos + 1}")
    return BooleanCircuit(len(names), gates, list(names))


def _natural(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


# ---------------------------------------------------------------- brute force

def _assignments(n: int) -> Iterable[tuple[bool, ...]]:
    # x1 is the most significant position, F before T
    return itertools.product((False, True), repeat=n)


def count_models(f: BooleanCircuit) -> int:
    return sum(f.evaluate(x) for x in _assignments(f.num_vars))


def brute_force_sat(f: BooleanCircuit) -> bool:
    return any(f.evaluate(x) for x in _assignments(f.num_vars))


def brute_force_emajsat(f: BooleanCircuit, k: int) -> tuple[bool, tuple[bool, ...], int]:
    """Is there a setting of x1..xk under which more than half of the
    completions satisfy ``f``?  Returns the answer, the best setting and its
    satisfying-completion count."""
    n = f.num_vars
    best_q, best = (), -1
    for q in _assignments(k):
        c = sum(f.evaluate(q + rest) for rest in _assignments(n - k))
        if c > best:
            best_q, best = q, c
    return 2 * best > 2 ** (n - k), best_q, best


def brute_force_maxsat(f: CnfFormula) -> tuple[int, tuple[bool, ...]]:
    best_x, best = (), -1
    for x in _assignments(f.num_vars):
        c = f.count_satisfied(x)
        if c > best:
            best_x, best = x, c
    return best, best_x


# ---------------------------------------------------------------- outputs

@dataclass
class ReductionOutput:
    network: BayesianNetwork
    map_vars: list[int]
    evidence: dict[int, int]
    threshold: Fraction
    metadata: dict = field(default_factory=dict)
    # MAP values are multiples of 1/lattice when set (theorems 1 and 7);
    # thresholds there can coincide with a value, so floats are snapped first
    lattice: int | None = None

    def __post_init__(self):
        if not self.threshold > 0:
            raise ReductionError("threshold must be positive")
        if set(self.map_vars) & set(self.evidence):
            raise ReductionError("MAP variables overlap the evidence")

    def decide(self, map_value: float) -> bool:
        """D-MAP answer: is the MAP value above the threshold?"""
        value = Fraction(map_value)
        if self.lattice is not None:
            value = Fraction(round(value * self.lattice), self.lattice)
        return value > self.threshold


def _bern(p_true) -> list[float]:
    p = float(p_true)
    return [1.0 - p, p]


def _node_table(parent_cards: Sequence[int], fn) -> np.ndarray:
    """Table over parents (last fastest) whose rows come from ``fn(states)``."""
    rows = [fn(states) for states in itertools.product(*(range(c) for c in parent_cards))]
    return np.array(rows, dtype=float).reshape(list(parent_cards) + [len(rows[0])])


def circuit_to_map_network(f: BooleanCircuit, k: int) -> ReductionOutput:
    """Variables get uniform priors, each gate a deterministic truth-table
    CPT over its operands; evidence sets the root gate to T and the MAP
    variables are X1..Xk.  Pr(q, root=T) = #q / 2^n."""
    n = f.num_vars
    if not 1 <= k <= n:
        raise ReductionError(f"k must lie in 1..{n}")
    b = NetworkBuilder("circuit")
    node_ids = [b.add(f"X{i + 1}", 2, [], [0.5, 0.5], TF) for i in range(n)]
    for j, g in enumerate(f.gates):
        parents = list(dict.fromkeys(node_ids[a] for a in g.args))
        pos = {p: i for i, p in enumerate(parents)}

        def row(states, g=g, pos=pos):
            vals = [bool(states[pos[node_ids[a]]]) for a in g.args]
            return _bern(f.apply(g.op, vals))

        node_ids.append(b.add(f"Y{j + 1}", 2, parents, _node_table([2] * len(parents), row), TF))
    root = node_ids[-1]
    return ReductionOutput(b.build(), list(range(k)), {root: 1}, Fraction(1, 2 ** (k + 1)),
                           {"theorem": 1, "n": n, "m": f.m, "k": k, "root": root}, lattice=2 ** n)


def r_bound(m: int, n: int, eps) -> int:
    """Smallest integer r with r > (m + n + 1) / (1 + log2(1/2 + eps))."""
    eps = Fraction(eps)
    r = max(1, math.floor((m + n + 1) / (1 + math.log2(0.5 + float(eps)))) - 1)
    while not r_satisfies(r, m, n, eps):
        r += 1
    while r > 1 and r_satisfies(r - 1, m, n, eps):
        r -= 1
    return r


def r_satisfies(r: int, m: int, n: int, eps) -> bool:
    """The weighting inequality, exactly: one consistent satisfying world
    outweighs 2^(m+n+1) worst-case others, i.e. (1 + 2 eps)^r > 2^(m+n+1)."""
    return (1 + 2 * Fraction(eps)) ** r > 2 ** (m + n + 1)


def emajsat_depth2_network(f: BooleanCircuit, k: int, eps) -> ReductionOutput:
    """Depth-2 construction without evidence.

    Roots X1..Xn and Y1..Ym are uniform and unconnected.  Each gate i gets r
    weight children Wi_j over (Yi, operands) that lean to T when Yi agrees
    with its gate applied to the operands; r satisfiability weights Wj
    under Ym lean to T when Ym = T.  MAP variables are X1..Xk and every
    weight variable.
    """
    eps = Fraction(eps)
    if not 0 < eps <= Fraction(1, 2):
        raise ReductionError("eps must lie in (0, 1/2]")
    n, m = f.num_vars, f.m
    if not 1 <= k <= n:
        raise ReductionError(f"k must lie in 1..{n}")
    r = r_bound(m, n, eps)
    hi = Fraction(1, 2) + eps
    b = NetworkBuilder("depth2")
    x_ids = [b.add(f"X{i + 1}", 2, [], [0.5, 0.5], TF) for i in range(n)]
    y_ids = [b.add(f"Y{j + 1}", 2, [], [0.5, 0.5], TF) for j in range(m)]
    node_ids = x_ids + y_ids
    weights = []
    for j, g in enumerate(f.gates):
        parents = list(dict.fromkeys([y_ids[j]] + [node_ids[a] for a in g.args]))
        pos = {p: i for i, p in enumerate(parents)}

        def row(states, g=g, pos=pos, y=y_ids[j]):
            vals = [bool(states[pos[node_ids[a]]]) for a in g.args]
            consistent = f.apply(g.op, vals) == bool(states[pos[y]])
            return _bern(hi if consistent else Fraction(1, 2))

        table = _node_table([2] * len(parents), row)
        weights += [b.add(f"W{j + 1}_{t + 1}", 2, parents, table, TF) for t in range(r)]
    sat_table = np.array([_bern(Fraction(1, 2)), _bern(hi)])
    weights += [b.add(f"W{t + 1}", 2, [y_ids[-1]], sat_table, TF) for t in range(r)]
    c = Fraction(1, 2 ** (m + n)) * hi ** ((m + 1) * r)
    # more than half of the 2^(n-k) completions; equals 2^(n-k-1) + 1 for k < n
    threshold = (2 ** (n - k) // 2 + 1) * c
    return ReductionOutput(b.build(), x_ids[:k] + weights, {}, threshold,
                           {"theorem": 2, "n": n, "m": m, "k": k, "eps": eps, "r": r, "C": c,
                            "weights": weights})


def _maxsat_gadget(b: NetworkBuilder, f: CnfFormula, suffix: str = "") -> tuple[list[int], int]:
    """Clause selector S0 (states 1..m) and the S/X chain; returns the X ids
    and the id of Sn."""
    n, m = f.num_vars, f.m
    # a single clause still needs two selector states: the pad state has
    # prior 0 and is routed to "satisfied", so it carries no mass
    s0_card = max(m, 2)
    prior = np.zeros(s0_card)
    prior[:m] = 1.0 / m
    names = [str(j + 1) for j in range(m)] + ["pad"] * (s0_card - m)
    s_prev = b.add(f"S0{suffix}", s0_card, [], prior, names)
    prev_card = s0_card
    xs = []
    for i in range(1, n + 1):
        x = b.add(f"X{i}{suffix}", 2, [], [0.5, 0.5], TF)
        xs.append(x)
        # S0 state j means clause j+1; later S states: 0 satisfied, j clause j
        shift = 1 if i == 1 else 0
        table = np.zeros((2, prev_card, m + 1))
        for xv in (0, 1):
            for sp in range(prev_card):
                clause = sp + shift
                if clause == 0 or clause > m:
                    table[xv, sp, 0] = 1.0
                elif any((l > 0) == bool(xv) for l in f.clauses[clause - 1] if abs(l) == i):
                    table[xv, sp, 0] = 1.0
                else:
                    table[xv, sp, clause] = 1.0
        s_prev = b.add(f"S{i}{suffix}", m + 1, [x, s_prev], table, [str(j) for j in range(m + 1)])
        prev_card = m + 1
    return xs, s_prev


def maxsat_to_polytree(f: CnfFormula, k: int = 0) -> ReductionOutput:
    """Clause-selection chain over a CNF.  With evidence Sn = 0,
    Pr(x, Sn = 0) = (#clauses x satisfies) / (m 2^n); the threshold
    k / (m 2^n) asks whether more than k clauses can be satisfied."""
    if f.m < 1:
        raise ReductionError("need at least one clause")
    if f.num_vars < 1:
        raise ReductionError("need at least one variable")
    if not 0 <= k < f.m:
        raise ReductionError(f"bound k must lie in 0..{f.m - 1}")
    b = NetworkBuilder("maxsat")
    xs, sn = _maxsat_gadget(b, f)
    denom = f.m * 2 ** f.num_vars
    # probabilities are multiples of 1/denom, so "> 0" is "> 1/(2 denom)"
    threshold = Fraction(k, denom) if k else Fraction(1, 2 * denom)
    return ReductionOutput(b.build(), xs, {sn: 0}, threshold,
                           {"theorem": 7, "n": f.num_vars, "m": f.m, "k": k, "denominator": denom},
                           lattice=denom)


def q_from_coefficient(m: int, n: int, eps: float, coefficient: float) -> int:
    """Smallest integer q > (coef (m+1)^(2 eps) (4n+4)^eps ln 2)^(1/(1-eps))."""
    bound = (coefficient * (m + 1) ** (2 * eps) * (4 * n + 4) ** eps * math.log(2)) ** (1 / (1 - eps))
    return math.floor(bound) + 1


def q_satisfies(q: int, m: int, n: int, eps: float) -> bool:
    """(1 + 1/4m)^q > 2^(size^eps) with size = q (m+1)^2 (4n+4), in log2."""
    size = q * (m + 1) ** 2 * (4 * n + 4)
    return q * math.log2(1 + 1 / (4 * m)) > size ** eps


def q_direct(m: int, n: int, eps: float) -> int:
    q = 1
    while not q_satisfies(q, m, n, eps):
        q += 1
    return q


def lemma9_holds(x: float) -> bool:
    return 4 * x + 0.5 > 1 / math.log(1 + 1 / (4 * x))


def replicate_polytree(f: CnfFormula, eps: float, copies: int | None = None) -> ReductionOutput:
    """``q`` copies of the clause-selection chain joined by uniform bridge
    variables B_i with parents (Sn_i, B_{i-1}).  With every Sn_i = 0 the MAP
    value is (kmax / (m 2^n))^q.  ``copies`` overrides q for testing.

    q comes from the coefficient 4m + 1/2, which provably dominates
    1 / ln(1 + 1/4m); the 4m + 1/4 variant is kept in the metadata."""
    if not 0 <= eps < 1:
        raise ReductionError("eps must lie in [0, 1)")
    if f.m < 1:
        raise ReductionError("need at least one clause")
    m, n = f.m, f.num_vars
    q_lemma = q_from_coefficient(m, n, eps, 4 * m + 0.5)
    q_quarter = q_from_coefficient(m, n, eps, 4 * m + 0.25)
    q = q_lemma if copies is None else int(copies)
    if q < 1:
        raise ReductionError("need at least one copy")
    b = NetworkBuilder("replicated")
    map_vars: list[int] = []
    evidence: dict[int, int] = {}
    prev_b = None
    for i in range(1, q + 1):
        xs, sn = _maxsat_gadget(b, f, suffix=f"_{i}")
        map_vars += xs
        evidence[sn] = 0
        parents = [sn] + ([prev_b] if prev_b is not None else [])
        cards = [m + 1] + ([2] if prev_b is not None else [])
        prev_b = b.add(f"B{i}", 2, parents, np.full(cards + [2], 0.5), TF)
    threshold = (Fraction(4 * m - 1, 4) / (m * 2 ** n)) ** q
    return ReductionOutput(b.build(), map_vars, evidence, threshold,
                           {"theorem": 8, "n": n, "m": m, "eps": eps, "q": q, "q_lemma": q_lemma,
                            "q_quarter": q_quarter, "q_direct": q_direct(m, n, eps),
                            "q_satisfies": q_satisfies(q, m, n, eps),
                            "q_quarter_satisfies": q_satisfies(q_quarter, m, n, eps)})


def network_depth(net: BayesianNetwork) -> int:
    """Number of nodes on the longest directed path."""
    depth = [1] * net.n
    for v in net.topological_order():
        for u in net.parents[v]:
            depth[v] = max(depth[v], depth[u] + 1)
    return max(depth) if depth else 0
