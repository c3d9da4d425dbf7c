"""Text formats for networks and queries.

Network file::

    # comment
    net <name>
    var <name> <cardinality> [state names...]
    cpt <child> | <parent1> <parent2> ...
    <one line per parent instantiation, last parent fastest>

Variables come first, then one ``cpt`` block per variable.  Emission writes
17 significant digits, so parse(emit(net)) reproduces every CPT entry bit
for bit and emit(parse(text)) == text for emitted text.

Query file::

    map <var> ...
    evidence <var>=<state> ...
    threshold <num>/<den>

States may be given by name or index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import ROW_TOLERANCE, BayesianNetwork, ModelError, Variable


class FormatError(ModelError):
    def __init__(self, lineno: int | None, msg: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno else msg)


def _lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _float(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise FormatError(lineno, f"not a number: {tok!r}") from None


def loads_network(text: str) -> BayesianNetwork:
    name = "net"
    variables: list[Variable] = []
    by_name: dict[str, int] = {}
    parents: dict[int, list[int]] = {}
    tables: dict[int, np.ndarray] = {}
    lines = list(_lines(text))
    i = 0
    while i < len(lines):
        lineno, line = lines[i]
        head, _, rest = line.partition(" ")
        i += 1
        if head == "net":
            name = rest.strip() or name
        elif head == "var":
            if tables:
                raise FormatError(lineno, "var after cpt blocks")
            parts = rest.split()
            if len(parts) < 2:
                raise FormatError(lineno, "var needs a name and a cardinality")
            vname, card_tok, states = parts[0], parts[1], parts[2:]
            if vname in by_name:
                raise FormatError(lineno, f"duplicate variable {vname!r}")
            try:
                card = int(card_tok)
            except ValueError:
                raise FormatError(lineno, f"bad cardinality {card_tok!r}") from None
            if states and len(states) != card:
                raise FormatError(lineno, f"{len(states)} state names for cardinality {card}")
            try:
                variables.append(Variable(len(variables), vname, card, tuple(states) or None))
            except ModelError as exc:
                raise FormatError(lineno, str(exc)) from None
            by_name[vname] = len(variables) - 1
        elif head == "cpt":
            child_part, _, par_part = rest.partition("|")
            toks = child_part.split()
            if len(toks) != 1:
                raise FormatError(lineno, "cpt needs exactly one child")
            child = _lookup(by_name, toks[0], lineno)
            if child in tables:
                raise FormatError(lineno, f"second cpt for {toks[0]!r}")
            ps = [_lookup(by_name, t, lineno) for t in par_part.split()]
            pcards = [variables[u].cardinality for u in ps]
            card = variables[child].cardinality
            rows = int(np.prod(pcards, dtype=np.int64)) if ps else 1
            values = np.empty((rows, card))
            for r in range(rows):
                if i >= len(lines):
                    raise FormatError(lineno, f"cpt for {toks[0]!r} ends after {r} of {rows} rows")
                rlineno, rline = lines[i]
                i += 1
                toks_r = rline.split()
                if len(toks_r) != card:
                    raise FormatError(rlineno, f"expected {card} numbers, found {len(toks_r)}")
                row = [_float(t, rlineno) for t in toks_r]
                if any(not 0.0 <= v <= 1.0 for v in row):
                    raise FormatError(rlineno, "probability outside [0, 1]")
                if abs(sum(row) - 1.0) > ROW_TOLERANCE:
                    raise FormatError(rlineno, f"row sums to {sum(row)!r}")
                values[r] = row
            parents[child] = ps
            tables[child] = values.reshape(pcards + [card])
        else:
            raise FormatError(lineno, f"unknown directive {head!r}")
    missing = [v.name for v in variables if v.id not in tables]
    if missing:
        raise FormatError(None, f"no cpt for {missing}")
    try:
        return BayesianNetwork(variables, [parents[v] for v in range(len(variables))],
                               [tables[v] for v in range(len(variables))], name)
    except ModelError as exc:
        raise FormatError(None, str(exc)) from None


def _lookup(by_name: Mapping[str, int], tok: str, lineno: int) -> int:
    try:
        return by_name[tok]
    except KeyError:
        raise FormatError(lineno, f"unknown variable {tok!r}") from None


def _num(x: float) -> str:
    return f"{float(x):.17g}"


def dumps_network(net: BayesianNetwork) -> str:
    out = [f"net {net.name}"]
    for var in net.variables:
        states = " " + " ".join(var.state_names) if var.state_names else ""
        out.append(f"var {var.name} {var.cardinality}{states}")
    for v in range(net.n):
        pnames = " ".join(net.variables[u].name for u in net.parents[v])
        out.append(f"cpt {net.variables[v].name} |" + (f" {pnames}" if pnames else ""))
        arr = net.cpt_array(v).reshape(-1, net.card(v))
        out.extend(" ".join(_num(x) for x in row) for row in arr)
    return "\n".join(out) + "\n"


def parse_network(path) -> BayesianNetwork:
    return loads_network(Path(path).read_text(encoding="utf-8"))


def emit_network(net: BayesianNetwork, path) -> None:
    Path(path).write_text(dumps_network(net), encoding="utf-8")


@dataclass
class Query:
    map_vars: list[int] = field(default_factory=list)
    evidence: dict[int, int] = field(default_factory=dict)
    threshold: Fraction | None = None


def loads_query(text: str, net: BayesianNetwork) -> Query:
    q = Query()
    for lineno, line in _lines(text):
        head, *toks = line.split()
        try:
            if head == "map":
                q.map_vars.extend(net.index(t) for t in toks)
            elif head == "evidence":
                for tok in toks:
                    vname, eq, state = tok.partition("=")
                    if not eq:
                        raise FormatError(lineno, f"expected <var>=<state>, got {tok!r}")
                    v = net.index(vname)
                    q.evidence[v] = net.variables[v].state_index(state)
            elif head == "threshold":
                if len(toks) != 1:
                    raise FormatError(lineno, "threshold takes one value")
                q.threshold = Fraction(toks[0])
            else:
                raise FormatError(lineno, f"unknown directive {head!r}")
        except (ModelError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(lineno, str(exc)) from None
    if set(q.map_vars) & set(q.evidence):
        raise FormatError(None, "MAP variables overlap the evidence")
    return q


def dumps_query(net: BayesianNetwork, map_vars: Sequence[int], evidence: Mapping[int, int],
                threshold: Fraction | None = None) -> str:
    out = []
    if map_vars:
        out.append("map " + " ".join(net.variables[v].name for v in map_vars))
    if evidence:
        out.append("evidence " + " ".join(f"{net.variables[v].name}={net.variables[v].state_label(s)}"
                                          for v, s in evidence.items()))
    if threshold is not None:
        t = Fraction(threshold)
        out.append(f"threshold {t.numerator}/{t.denominator}")
    return "\n".join(out) + "\n"


def parse_query(path, net: BayesianNetwork) -> Query:
    return loads_query(Path(path).read_text(encoding="utf-8"), net)
