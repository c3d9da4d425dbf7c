"""Experiment runners: search quality with exact scoring and search
improvement with BP scoring.

Every random choice in run ``i`` derives from ``SeedSequence([seed, i, ...])``
so results never depend on worker count or on which other runs exist.
Records are flat dicts with a fixed key order; ``write_records`` emits one
JSON object per line.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bp import BpConfig, BpScorer
from .elimination import MAP, ResourceLimitError, eliminate
from .jointree import ExactScorer
from .model import BayesianNetwork, ImpossibleEvidenceError
from .netgen import ONE, TWO, EvidenceSamplingError, GenSpec, generate, sample_evidence
from .oracle import brute_force_map
from .search import (SearchConfig, initialize, pure_hill_climb_restart, stochastic_hill_climb,
                     taboo_search)

log = logging.getLogger(__name__)

TABLE_METHODS = ("Rand-Hill", "Rand-Taboo", "ML", "ML-Hill", "ML-Taboo", "MPE", "MPE-Hill",
                 "MPE-Taboo", "Seq", "Seq-Hill", "Seq-Taboo")
BP_METHODS = ("MPE", "MPE-Hill", "MPE-SHill", "ML", "ML-Hill", "ML-SHill")
SOLVED_RTOL = 1e-9

_SEARCH = {"Hill": pure_hill_climb_restart, "SHill": stochastic_hill_climb, "Taboo": taboo_search}


class CrosscheckError(AssertionError):
    pass


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def split_method(name: str) -> tuple[str, str | None]:
    init, _, search = name.partition("-")
    return init.lower(), (search or None)


def same_value(found_log: float, exact_log: float, rtol: float = SOLVED_RTOL) -> bool:
    """|found - exact| <= rtol * exact on the linear scale."""
    if exact_log == -math.inf:
        return found_log == -math.inf
    if found_log == -math.inf:
        return False
    return abs(math.expm1(found_log - exact_log)) <= rtol


def _finite(x: float | None) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def pick_query(net: BayesianNetwork, rng: np.random.Generator, max_map: int,
               max_evidence: int | None) -> tuple[list[int], dict[int, int]]:
    """MAP variables from the roots (a random subset when there are more than
    ``max_map``), evidence on leaves outside the MAP set with nonzero
    probability."""
    roots = net.roots()
    if len(roots) > max_map:
        roots = sorted(int(v) for v in rng.choice(roots, size=max_map, replace=False))
    leaves = [v for v in net.leaves() if v not in roots]
    if max_evidence is not None and len(leaves) > max_evidence:
        leaves = sorted(int(v) for v in rng.choice(leaves, size=max_evidence, replace=False))
    return roots, sample_evidence(net, leaves, rng)


def _pmap(fn: Callable, tasks: Sequence, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------- tables 1-3

@dataclass
class TableConfig:
    gen_method: str = TWO
    n: int = 20
    p: float = 0.1
    c: int = 12
    biases: tuple[float, ...] = (0.0, 0.125, 0.25, 0.375, 0.5)
    runs: int = 200
    max_map: int = 10
    max_evidence: int | None = None
    budget: int = 150
    methods: tuple[str, ...] = TABLE_METHODS
    p_f: float = 0.35
    restart_flip_prob: float = 0.3
    taboo_random_kick: int = 5
    seed: int = 0
    workers: int = 1
    crosscheck_max_worlds: int = 2 ** 16


@dataclass
class TableRecord:
    run: int
    bias: float
    method: str
    n_map: int
    n_evidence: int
    exact_log: float | None
    found_log: float | None
    solved: bool
    init_evaluations: int
    search_evaluations: int
    total_evaluations: int
    evaluations_to_best: int
    peaks: int
    first_peak_log: float | None
    best_at_first_peak: bool | None


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    records: list
    tables: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def write_records(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(records_jsonl(self.records))

    def format(self) -> str:
        return format_report(self)


def records_jsonl(records: Sequence) -> str:
    return "".join(json.dumps(asdict(r) if not isinstance(r, dict) else r) + "\n" for r in records)


def _table_run(cfg: TableConfig, run: int) -> tuple[list[TableRecord], list[dict]]:
    spec = GenSpec(method=cfg.gen_method, n=cfg.n, p=cfg.p, c=cfg.c, bias=0.5, seed=derive_seed(cfg.seed, run))
    records, failures = [], []
    for bi, bias in enumerate(cfg.biases):
        try:
            records += _table_cell(cfg, run, bi, GenSpec(**{**asdict(spec), "bias": bias}))
        except (EvidenceSamplingError, ImpossibleEvidenceError, ResourceLimitError) as exc:
            log.warning("run %d bias %s skipped: %s", run, bias, exc)
            failures.append({"run": run, "bias": bias, "error": str(exc)})
    return records, failures


def _table_cell(cfg: TableConfig, run: int, bi: int, spec: GenSpec) -> list[TableRecord]:
    net = generate(spec)
    rng = _rng(cfg.seed, run, bi, 0)
    q, e = pick_query(net, rng, cfg.max_map, cfg.max_evidence)
    exact = eliminate(net, e, mode=MAP, q_vars=q)
    exact_log = exact.log_value
    if int(np.prod(net.cards, dtype=object)) <= cfg.crosscheck_max_worlds:
        bf = brute_force_map(net, e, q)
        if not same_value(math.log(bf.value) if bf.value > 0 else -math.inf, exact_log, 1e-9):
            raise CrosscheckError(f"run {run}: elimination {exact.value!r} vs brute force {bf.value!r}")
    scorer = ExactScorer(net, e, q)
    out = []
    for mi, method in enumerate(cfg.methods):
        init_mode, search = split_method(method)
        init = initialize(net, e, q, init_mode, scorer, seed=_rng(cfg.seed, run, bi, 1 + mi))
        base = dict(run=run, bias=spec.bias, method=method, n_map=len(q), n_evidence=len(e),
                    exact_log=_finite(exact_log), init_evaluations=init.evaluations)
        if search is None:
            found = scorer.score(tuple(init.assignment[v] for v in q))
            out.append(TableRecord(**base, found_log=_finite(found), solved=same_value(found, exact_log),
                                   search_evaluations=0, total_evaluations=init.evaluations,
                                   evaluations_to_best=init.evaluations, peaks=0, first_peak_log=None,
                                   best_at_first_peak=None))
            continue
        sc = SearchConfig(max_evaluations=max(0, cfg.budget - init.evaluations), p_f=cfg.p_f,
                          restart_flip_prob=cfg.restart_flip_prob, taboo_random_kick=cfg.taboo_random_kick,
                          seed=derive_seed(cfg.seed, run, bi, 1 + mi))
        res = _SEARCH[search](scorer, init.assignment, sc)
        at_first = None
        if res.first_peak_log_score is not None:
            at_first = same_value(res.best_log_score, res.first_peak_log_score)
        out.append(TableRecord(**base, found_log=_finite(res.best_log_score),
                               solved=same_value(res.best_log_score, exact_log),
                               search_evaluations=res.evaluations,
                               total_evaluations=init.evaluations + res.evaluations,
                               evaluations_to_best=init.evaluations + res.evaluations_to_best,
                               peaks=res.peaks_found, first_peak_log=_finite(res.first_peak_log_score),
                               best_at_first_peak=at_first))
    return out


def run_table_experiment(cfg: TableConfig | None = None) -> ExperimentReport:
    cfg = cfg or TableConfig()
    results = _pmap(lambda i: _table_run(cfg, i), range(cfg.runs), cfg.workers)
    records = [r for recs, _ in results for r in recs]
    failures = [f for _, fails in results for f in fails]
    report = ExperimentReport("table", asdict(cfg), records, failures=failures)
    report.tables = table_aggregates(records, cfg.methods, cfg.biases)
    return report


def _stats(xs: Sequence[float]) -> dict:
    if not xs:
        return {"n": 0, "mean": None, "stdev": None, "max": None}
    return {"n": len(xs), "mean": statistics.fmean(xs), "stdev": statistics.pstdev(xs), "max": max(xs)}


def table_aggregates(records: Sequence[TableRecord], methods, biases) -> dict:
    solved = {m: {b: 0 for b in biases} for m in methods}
    runs = {b: 0 for b in biases}
    evals: dict = {m: {b: [] for b in biases} for m in methods}
    first_peak: dict = {}
    for r in records:
        solved[r.method][r.bias] += r.solved
        evals[r.method][r.bias].append(r.evaluations_to_best)
        if r.method == methods[0]:
            runs[r.bias] += 1
        if r.best_at_first_peak is not None:
            first_peak.setdefault(r.method, []).append(r.best_at_first_peak)
    return {
        "runs": runs,
        "solved": solved,
        "evaluations": {m: {b: _stats(evals[m][b]) for b in biases} for m in methods},
        "best_at_first_peak": {m: sum(v) / len(v) for m, v in first_peak.items()},
    }


# ---------------------------------------------------------------- tables 6-8

@dataclass
class BpExperimentConfig:
    n: int = 60
    c: int = 13
    bias: float = 0.25
    runs: int = 50
    max_map: int = 25
    max_evidence: int = 10
    steps: int = 100
    p_f: float = 0.3
    methods: tuple[str, ...] = BP_METHODS
    tolerance: float = 1e-8
    max_sweeps: int = 100
    exact_map: bool = True
    cell_budget: int = 2 ** 24
    seed: int = 0
    workers: int = 1


@dataclass
class BpRecord:
    run: int
    method: str
    n_map: int
    n_evidence: int
    map_log: float | None
    init_log: float | None
    found_log: float | None
    approx_log: float | None
    log10_improvement: float | None
    improved: bool
    worse: bool
    solved: bool | None
    zero_probability: bool
    flagged: bool
    evaluations: int
    bp_runs: int
    bp_nonconverged: int


def _exact_log(net, e, q, state) -> float:
    ev = dict(e)
    ev.update(zip(q, state))
    return eliminate(net, ev).log_value


def _bp_run(cfg: BpExperimentConfig, run: int) -> tuple[list[BpRecord], list[dict]]:
    try:
        return _bp_cell(cfg, run), []
    except (EvidenceSamplingError, ImpossibleEvidenceError, ResourceLimitError) as exc:
        log.warning("run %d skipped: %s", run, exc)
        return [], [{"run": run, "error": str(exc)}]


def _bp_cell(cfg: BpExperimentConfig, run: int) -> list[BpRecord]:
    net = generate(GenSpec(method=ONE, n=cfg.n, c=cfg.c, bias=cfg.bias, seed=derive_seed(cfg.seed, run)))
    q, e = pick_query(net, _rng(cfg.seed, run, 0), cfg.max_map, cfg.max_evidence)
    map_log = None
    if cfg.exact_map:
        try:
            map_log = eliminate(net, e, mode=MAP, q_vars=q, cell_budget=cfg.cell_budget).log_value
        except ResourceLimitError as exc:
            log.info("run %d: exact MAP skipped (%s)", run, exc)
    bpc = BpConfig(tolerance=cfg.tolerance, max_sweeps=cfg.max_sweeps)
    shared = BpScorer(net, e, q, bpc)
    inits = {}
    out = []
    for mi, method in enumerate(cfg.methods):
        init_mode, search = split_method(method)
        if init_mode not in inits:
            a = initialize(net, e, q, init_mode, shared, seed=_rng(cfg.seed, run, 1 + mi))
            state = tuple(a.assignment[v] for v in q)
            inits[init_mode] = (state, a.evaluations, _exact_log(net, e, q, state))
        state, init_cost, init_log = inits[init_mode]
        scorer = shared.fork()
        runs_before, nonconv_before = scorer.runs, scorer.nonconverged
        if search is None:
            found, approx, evals, flagged = state, None, init_cost, False
        else:
            sc = SearchConfig(max_evaluations=cfg.steps, p_f=cfg.p_f, restarts=False,
                              seed=derive_seed(cfg.seed, run, 1 + mi))
            res = _SEARCH[search](scorer, state, sc)
            found = tuple(res.best[v] for v in q)
            approx, evals, flagged = res.best_log_score, init_cost + res.evaluations, res.flagged
        found_log = _exact_log(net, e, q, found)
        finite = math.isfinite(found_log) and math.isfinite(init_log)
        gain = (found_log - init_log) / math.log(10) if finite else None
        improved, worse = found_log > init_log, found_log < init_log
        out.append(BpRecord(run=run, method=method, n_map=len(q), n_evidence=len(e), map_log=_finite(map_log),
                            init_log=_finite(init_log), found_log=_finite(found_log),
                            approx_log=_finite(approx), log10_improvement=gain, improved=improved,
                            worse=worse,
                            solved=None if map_log is None else same_value(found_log, map_log),
                            zero_probability=found_log == -math.inf, flagged=flagged, evaluations=evals,
                            bp_runs=scorer.runs - runs_before,
                            bp_nonconverged=scorer.nonconverged - nonconv_before))
    return out


def run_bp_experiment(cfg: BpExperimentConfig | None = None) -> ExperimentReport:
    cfg = cfg or BpExperimentConfig()
    results = _pmap(lambda i: _bp_run(cfg, i), range(cfg.runs), cfg.workers)
    records = [r for recs, _ in results for r in recs]
    failures = [f for _, fails in results for f in fails]
    report = ExperimentReport("bp", asdict(cfg), records, failures=failures)
    report.tables = bp_aggregates(records, cfg.methods)
    return report


def _log10_mean_exp10(xs: Sequence[float]) -> float:
    """log10 of the mean of 10**x, without overflow."""
    top = max(xs)
    return top + math.log10(statistics.fmean(10.0 ** (x - top) for x in xs))


def bp_aggregates(records: Sequence[BpRecord], methods) -> dict:
    out = {}
    for m in methods:
        rs = [r for r in records if r.method == m]
        with_map = [r for r in rs if r.solved is not None]
        ratios = [r.log10_improvement for r in rs if r.log10_improvement is not None]
        to_map = [(r.found_log - r.map_log) / math.log(10) for r in with_map
                  if r.found_log is not None and r.map_log is not None]
        out[m] = {
            "runs": len(rs),
            "solved": sum(bool(r.solved) for r in with_map),
            "with_exact_map": len(with_map),
            "worst_log10_ratio_to_map": min(to_map) if to_map else None,
            "improved": sum(r.improved for r in rs),
            "worse": sum(r.worse for r in rs),
            "zero_probability": sum(r.zero_probability for r in rs),
            "log10_improvement": ({"min": min(ratios), "median": statistics.median(ratios),
                                   "mean": _log10_mean_exp10(ratios),
                                   "max": max(ratios)} if ratios else None),
        }
    return out


# ---------------------------------------------------------------- output

def _fmt(x, digits=3) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.{digits}g}"
    return str(x)


def format_report(report: ExperimentReport) -> str:
    t = report.tables
    lines = []
    if report.kind == "table":
        biases = list(t["runs"])
        lines.append("solved exactly (runs per bias: " + ", ".join(f"{b}: {t['runs'][b]}" for b in biases) + ")")
        lines.append(f"{'method':<12}" + "".join(f"{b:>8}" for b in biases))
        for m, row in t["solved"].items():
            lines.append(f"{m:<12}" + "".join(f"{row[b]:>8}" for b in biases))
        last = biases[-1]
        lines.append("")
        lines.append(f"evaluations to best at bias {last}")
        lines.append(f"{'method':<12}{'mean':>8}{'stdev':>8}{'max':>8}")
        for m, row in t["evaluations"].items():
            s = row[last]
            lines.append(f"{m:<12}{_fmt(s['mean']):>8}{_fmt(s['stdev']):>8}{_fmt(s['max']):>8}")
        if t["best_at_first_peak"]:
            lines.append("")
            lines.append("share of runs whose best was the first peak: " + ", ".join(
                f"{m} {v:.2f}" for m, v in t["best_at_first_peak"].items()))
    else:
        lines.append(f"{'method':<11}{'solved':>8}{'improved':>10}{'worse':>7}{'zero':>6}"
                     f"{'log10 gain min':>16}{'median':>9}{'mean':>9}{'max':>9}{'worst vs MAP':>14}")
        for m, s in t.items():
            g = s["log10_improvement"] or {}
            lines.append(f"{m:<11}{str(s['solved']) + '/' + str(s['with_exact_map']):>8}{s['improved']:>10}"
                         f"{s['worse']:>7}{s['zero_probability']:>6}{_fmt(g.get('min')):>16}"
                         f"{_fmt(g.get('median')):>9}{_fmt(g.get('mean')):>9}{_fmt(g.get('max')):>9}"
                         f"{_fmt(s['worst_log10_ratio_to_map']):>14}")
    if report.failures:
        lines.append(f"skipped runs: {len(report.failures)}")
    return "\n".join(lines)
