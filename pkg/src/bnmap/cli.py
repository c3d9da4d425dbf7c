"""Command line interface.

Exit codes: 0 success, 2 validation error (bad input, bad file, impossible
evidence), 3 resource guard (elimination table or enumeration too large).
Human-readable output goes to stdout; ``--records`` writes one JSON record
per line.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .bp import BpConfig, BpScorer, ContradictionError
from .elimination import MAP, ResourceLimitError, eliminate, width_study
from .experiments import (BpExperimentConfig, TableConfig, records_jsonl, run_bp_experiment,
                          run_table_experiment)
from .formats import dumps_network, dumps_query, parse_network, parse_query
from .jointree import ExactScorer
from .model import ImpossibleEvidenceError, ModelError
from .netgen import ONE, TWO, GenSpec, generate
from .oracle import OracleSizeError
from .reductions import (ReductionError, circuit_to_map_network, emajsat_depth2_network,
                         maxsat_to_polytree, parse_circuit, parse_dimacs, replicate_polytree)
from .search import INIT_MODES, SEARCHES, SearchConfig, initialize

EXIT_OK, EXIT_VALIDATION, EXIT_RESOURCE = 0, 2, 3


class UsageError(ValueError):
    pass


def _write_records(path, records) -> None:
    if path:
        Path(path).write_text(records_jsonl(records), encoding="utf-8")


def _split(text: str | None) -> list[str]:
    return [t for t in (text or "").replace(",", " ").split() if t]


def _query_from_args(net, args):
    if args.query:
        q = parse_query(args.query, net)
        map_vars, evidence = q.map_vars, q.evidence
    else:
        map_vars, evidence = [], {}
    map_vars = map_vars + [net.index(t) for t in _split(args.map)]
    for tok in _split(args.evidence):
        name, eq, state = tok.partition("=")
        if not eq:
            raise UsageError(f"evidence must look like X=state, got {tok!r}")
        v = net.index(name)
        evidence[v] = net.variables[v].state_index(state)
    if len(set(map_vars)) != len(map_vars):
        raise UsageError("a MAP variable is listed twice")
    if set(map_vars) & set(evidence):
        raise UsageError("MAP variables overlap the evidence")
    return map_vars, evidence


def cmd_query(args) -> int:
    net = parse_network(args.net)
    q, e = _query_from_args(net, args)
    if args.method == "exact":
        res = eliminate(net, e, mode=MAP, q_vars=q)
        if res.zero:
            raise ImpossibleEvidenceError()
        best, log_score, evals, to_best = {v: res.assignment[v] for v in q}, res.log_value, 0, 0
        init_mode = "-"
    else:
        if args.engine == "exact":
            scorer = ExactScorer(net, e, q)
        else:
            scorer = BpScorer(net, e, q, BpConfig(tolerance=args.bp_tolerance, max_sweeps=args.bp_sweeps))
        init_mode = args.init
        rng = np.random.default_rng(args.seed)
        init = initialize(net, e, q, init_mode, scorer, seed=rng)
        cfg = SearchConfig(max_evaluations=max(0, args.iters - init.evaluations), p_f=args.pf,
                           seed=args.seed, restarts=args.method != "hill" or not args.no_restart)
        res = SEARCHES[args.method](scorer, init.assignment, cfg)
        best, log_score = res.best, res.best_log_score
        evals, to_best = init.evaluations + res.evaluations, init.evaluations + res.evaluations_to_best
    exact_log = None
    if args.engine == "bp" and args.rescore:
        exact_log = eliminate(net, {**e, **best}).log_value
    width = max([len("variable")] + [len(net.variables[v].name) for v in q])
    print(f"{'variable':<{width}}  state")
    for v in q:
        print(f"{net.variables[v].name:<{width}}  {net.variables[v].state_label(best[v])}")
    if args.engine == "bp" and args.method != "exact":
        # BP scores are chained neighbor ratios, anchored at 0 for the start state
        print(f"log10 gain over the initialization (bp estimate) = {log_score / math.log(10):.10g}")
    else:
        print(f"log10 Pr(map, e) = {log_score / math.log(10):.10g}")
    if exact_log is not None:
        print(f"log10 Pr(map, e) exact = {exact_log / math.log(10):.10g}")
    print(f"evaluations = {evals}, to best = {to_best}")
    _write_records(args.records, [{
        "method": args.method, "engine": args.engine, "init": init_mode, "seed": args.seed,
        "map": {net.variables[v].name: net.variables[v].state_label(best[v]) for v in q},
        "log_score": log_score if math.isfinite(log_score) else None,
        "exact_log_score": exact_log, "evaluations": evals, "evaluations_to_best": to_best}])
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = GenSpec(method=args.method, n=args.n, c=args.c, p=args.p, bias=args.bias, seed=args.seed,
                   max_parents=args.max_parents)
    text = dumps_network(generate(spec))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cnf_as_circuit(f):
    names = [f"x{i}" for i in range(1, f.num_vars + 1)]
    clauses = ["(" + " | ".join(("~" if l < 0 else "") + names[abs(l) - 1] for l in c) + ")" for c in f.clauses]
    return parse_circuit(" & ".join(clauses), names)


def cmd_reduce(args) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    if args.from_ == "cnf":
        cnf = parse_dimacs(text)
        circuit = _cnf_as_circuit(cnf) if args.theorem in (1, 2) else None
    else:
        if args.theorem in (7, 8):
            raise UsageError("theorems 7 and 8 reduce from MAXSAT; use --from cnf")
        circuit, cnf = parse_circuit(text), None
    eps = Fraction(args.eps) if args.eps is not None else None
    if args.theorem == 1:
        out = circuit_to_map_network(circuit, args.k if args.k is not None else circuit.num_vars)
    elif args.theorem == 2:
        out = emajsat_depth2_network(circuit, args.k if args.k is not None else 0,
                                     eps if eps is not None else Fraction(1, 4))
    elif args.theorem == 7:
        out = maxsat_to_polytree(cnf, args.k or 0)
    else:
        out = replicate_polytree(cnf, float(eps) if eps is not None else 0.0, args.copies)
    net_text = dumps_network(out.network)
    query_text = dumps_query(out.network, out.map_vars, out.evidence, out.threshold)
    if args.out:
        Path(args.out).write_text(net_text, encoding="utf-8")
        qpath = args.query_out or str(Path(args.out).with_suffix(".query"))
        Path(qpath).write_text(query_text, encoding="utf-8")
        print(f"wrote {args.out} and {qpath}")
    print(f"variables {out.network.n}, MAP variables {len(out.map_vars)}, evidence {len(out.evidence)}")
    print(f"threshold {out.threshold}")
    meta = {k: (str(v) if isinstance(v, Fraction) else v) for k, v in out.metadata.items()
            if isinstance(v, (int, float, str, bool, Fraction))}
    for k, v in meta.items():
        print(f"{k} {v}")
    record = {"theorem": args.theorem, "variables": out.network.n, "threshold": str(out.threshold), **meta}
    if args.solve:
        res = eliminate(out.network, out.evidence, mode=MAP, q_vars=out.map_vars)
        decision = out.decide(res.value)
        print(f"MAP value {res.value!r}, decision {'yes' if decision else 'no'}")
        record.update(map_value=res.value, decision=decision)
    _write_records(args.records, [record])
    return EXIT_OK


def cmd_width_study(args) -> int:
    nets = [generate(GenSpec(method=ONE, n=args.n, c=args.c, bias=0.5, seed=args.seed + i))
            for i in range(args.nets)]
    sizes = list(range(0, args.n + 1, args.step))
    if sizes[-1] != args.n:
        sizes.append(args.n)
    rows = width_study(nets, sizes, seed=args.seed)
    print(f"{'|Q|':>5}{'min':>8}{'max':>8}{'mean':>8}{'wmean':>8}")
    for r in rows:
        print(f"{r['size']:>5}{r['min']:>8.0f}{r['max']:>8.0f}{r['mean']:>8.2f}{r['weighted_mean']:>8.2f}")
    _write_records(args.records, rows)
    return EXIT_OK


_KINDS = {"table": (TableConfig, run_table_experiment), "bp": (BpExperimentConfig, run_bp_experiment)}


def cmd_experiment(args) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise UsageError("experiment config must be a JSON object")
    kind = raw.pop("kind", "table")
    if kind not in _KINDS:
        raise UsageError(f"unknown experiment kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, runner = _KINDS[kind]
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise UsageError(f"unknown config keys for {kind}: {sorted(extra)}")
    for key in ("biases", "methods"):
        if key in raw:
            raw[key] = tuple(raw[key])
    report = runner(cls(**raw))
    print(report.format())
    out = args.records or str(Path(args.config).with_suffix(".records.jsonl"))
    report.write_records(out)
    Path(out).with_suffix(".summary.json").write_text(
        json.dumps({"kind": report.kind, "config": report.config, "tables": report.tables,
                    "failures": report.failures}, indent=2, default=str), encoding="utf-8")
    print(f"records written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnmap", description="MAP inference, search and hardness tools")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="solve a MAP query")
    q.add_argument("--net", required=True)
    q.add_argument("--query", help="query file (map/evidence lines)")
    q.add_argument("--map", help="MAP variables, comma separated")
    q.add_argument("--evidence", help="evidence such as X=1,Y=0")
    q.add_argument("--engine", choices=("exact", "bp"), default="exact")
    q.add_argument("--method", choices=("hill", "shill", "taboo", "exact"), default="taboo")
    q.add_argument("--init", choices=INIT_MODES, default="seq")
    q.add_argument("--iters", type=int, default=150, help="evaluation budget including initialization")
    q.add_argument("--pf", type=float, default=0.35)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--order-policy", choices=("minfill",), default="minfill")
    q.add_argument("--no-restart", action="store_true", help="pure hill climbing stops at the first peak")
    q.add_argument("--bp-tolerance", type=float, default=1e-8)
    q.add_argument("--bp-sweeps", type=int, default=100)
    q.add_argument("--rescore", action="store_true", help="re-score a BP result exactly")
    q.add_argument("--records")
    q.set_defaults(func=cmd_query)

    g = sub.add_parser("gen", help="generate a random network")
    g.add_argument("--method", choices=(ONE, TWO), default=TWO)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--c", type=int, default=12)
    g.add_argument("--p", type=float, default=0.25)
    g.add_argument("--bias", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-parents", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("reduce", help="build a hardness-reduction network")
    r.add_argument("--from", dest="from_", choices=("cnf", "circuit"), required=True)
    r.add_argument("--input", required=True, help="DIMACS file or circuit expression file")
    r.add_argument("--theorem", type=int, choices=(1, 2, 7, 8), required=True)
    r.add_argument("--eps", help="epsilon, e.g. 1/4")
    r.add_argument("--k", type=int, help="number of MAP-side variables (1, 2) or clause bound (7)")
    r.add_argument("--copies", type=int, help="override the replication count (theorem 8)")
    r.add_argument("--out", help="network output file")
    r.add_argument("--query-out", help="query output file (default: <out>.query)")
    r.add_argument("--solve", action="store_true", help="solve the emitted MAP query and decide")
    r.add_argument("--records")
    r.set_defaults(func=cmd_reduce)

    w = sub.add_parser("width-study", help="constrained versus unconstrained width")
    w.add_argument("--nets", type=int, default=20)
    w.add_argument("--n", type=int, default=100)
    w.add_argument("--c", type=int, default=12)
    w.add_argument("--step", type=int, default=5)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--records")
    w.set_defaults(func=cmd_width_study)

    x = sub.add_parser("experiment", help="run an experiment from a JSON config")
    x.add_argument("config")
    x.add_argument("--records", help="records file (default: <config>.records.jsonl)")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ResourceLimitError, OracleSizeError) as exc:
        print(f"error: resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ImpossibleEvidenceError, ContradictionError) as exc:
        print(f"error: evidence has probability zero {exc}".rstrip(), file=sys.stderr)
        return EXIT_VALIDATION
    except (ModelError, ReductionError, UsageError, ValueError, KeyError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
