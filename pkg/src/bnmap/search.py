"""Local search over MAP-variable instantiations.

All algorithms work on log scores supplied by a scorer object:

* ``evaluate(state, known=None) -> Evaluation`` runs one neighbor-scoring
  pass (one network evaluation).  ``known`` is the score the caller already
  holds for ``state`` when it was reached as a neighbor; approximate scorers
  use it to chain ratios, exact ones ignore it.
* ``score(state) -> float`` log score used to re-verify the returned best.
* ``posteriors(evidence, targets)`` marginals for the ML/Seq initializations.
* ``map_vars``, ``cards``, ``approximate``.

States are tuples aligned with ``scorer.map_vars``.  One evaluation is one
call to ``evaluate``; the budget caps those calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .elimination import MPE, eliminate
from .model import BayesianNetwork, ImpossibleEvidenceError, ModelError

INIT_MODES = ("rand", "mpe", "ml", "seq")

# A move or a new best must beat the reference by this much in log space.
# The same state scored from two different propagations can differ by a few
# ulps; without the margin such noise counts as progress.
IMPROVE_TOL = 1e-12


@dataclass
class Evaluation:
    """One neighbor-scoring pass: log score of the state and, per MAP
    variable, the log scores of every state of that variable with the rest
    held fixed (the entry at the current state equals ``score``)."""

    score: float
    neighbors: list[np.ndarray]
    flagged: bool = False


class Scorer(Protocol):
    map_vars: list[int]
    cards: list[int]
    approximate: bool

    def evaluate(self, state: Sequence[int], known: float | None = None) -> Evaluation: ...

    def score(self, state: Sequence[int]) -> float: ...

    def posteriors(self, evidence: Mapping[int, int], targets: Sequence[int]) -> dict[int, np.ndarray]: ...


@dataclass
class SearchConfig:
    max_evaluations: int = 150
    p_f: float = 0.35
    restart_flip_prob: float = 0.3
    taboo_random_kick: int = 5
    seed: int = 0
    restarts: bool = True
    trace: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_f <= 1.0:
            raise ValueError("p_f must lie in [0, 1]")
        if not 0.0 <= self.restart_flip_prob <= 1.0:
            raise ValueError("restart_flip_prob must lie in [0, 1]")
        if self.max_evaluations < 0:
            raise ValueError("max_evaluations must be nonnegative")


@dataclass
class TraceStep:
    evaluation: int
    state: tuple
    score: float
    best_score: float
    move: str


@dataclass
class SearchResult:
    best: dict[int, int]
    best_log_score: float
    evaluations: int
    evaluations_to_best: int
    peaks_found: int = 0
    first_peak_log_score: float | None = None
    flagged: bool = False
    trace: list[TraceStep] | None = None

    @property
    def best_score(self) -> float:
        return math.exp(self.best_log_score)


@dataclass
class InitResult:
    assignment: dict[int, int]
    evaluations: int


def initialize(net: BayesianNetwork, e: Mapping[int, int], map_vars: Sequence[int], mode: str,
               scorer: Scorer | None = None, seed=0) -> InitResult:
    """Starting point for the search.

    ``rand`` draws states uniformly (no evaluations, evidence not checked);
    ``mpe`` projects an exact MPE; ``ml`` takes each variable's most likely
    state from one propagation; ``seq`` fixes one (variable, state) pair per
    propagation, always the most probable given what is fixed so far.
    """
    map_vars = list(map_vars)
    if set(map_vars) & set(e):
        raise ModelError("MAP variables overlap the evidence")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mode == "rand":
        return InitResult({v: int(rng.integers(net.card(v))) for v in map_vars}, 0)
    if mode == "mpe":
        res = eliminate(net, e, mode=MPE)
        if res.zero:
            raise ImpossibleEvidenceError()
        return InitResult({v: res.assignment[v] for v in map_vars}, 1)
    if scorer is None:
        raise ValueError(f"initialization {mode!r} needs a scorer")
    if mode == "ml":
        post = scorer.posteriors(e, map_vars) if map_vars else {}
        return InitResult({v: int(np.argmax(post[v])) for v in map_vars}, 1 if map_vars else 0)
    if mode == "seq":
        fixed: dict[int, int] = {}
        evals = 0
        for _ in range(len(map_vars)):
            ev = dict(e)
            ev.update(fixed)
            todo = sorted(v for v in map_vars if v not in fixed)
            post = scorer.posteriors(ev, todo)
            evals += 1
            best_v, best_x, best_p = None, None, -1.0
            for v in todo:
                for x, p in enumerate(post[v]):
                    if p > best_p:
                        best_v, best_x, best_p = v, x, p
            fixed[best_v] = int(best_x)
        return InitResult({v: fixed[v] for v in map_vars}, evals)
    raise ValueError(f"unknown initialization {mode!r}")


class _Run:
    """Bookkeeping shared by the three searches."""

    def __init__(self, scorer: Scorer, s0, config: SearchConfig):
        self.scorer = scorer
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.vars = list(scorer.map_vars)
        self.cards = list(scorer.cards)
        if isinstance(s0, Mapping):
            missing = [v for v in self.vars if v not in s0]
            if missing:
                raise ModelError(f"initial state misses MAP variables {missing}")
            s0 = tuple(int(s0[v]) for v in self.vars)
        self.s0 = tuple(int(x) for x in s0)
        if len(self.s0) != len(self.vars):
            raise ModelError("initial state does not match the MAP variables")
        self.best = self.s0
        self.best_log: float | None = None
        self.evals = 0
        self.evals_to_best = 0
        self.peaks = 0
        self.first_peak: float | None = None
        self.flagged = False
        self.trace: list[TraceStep] | None = [] if config.trace else None
        self.moves = [(i, x) for i in range(len(self.vars)) for x in range(self.cards[i])]

    def budget_left(self) -> bool:
        return self.evals < self.config.max_evaluations

    def evaluate(self, state, known):
        self.evals += 1
        ev = self.scorer.evaluate(state, known)
        self.flagged |= ev.flagged
        if known is None:
            # the start state's score counts as known at initialization
            self.offer(state, ev.score, at=0 if self.evals == 1 else self.evals)
        return ev

    def offer(self, state, score, at):
        if self.best_log is None or better(score, self.best_log):
            self.best, self.best_log, self.evals_to_best = state, score, at

    def log(self, state, score, move):
        if self.trace is not None:
            self.trace.append(TraceStep(self.evals, state, score, self.best_log, move))

    def neighbors(self, state):
        return [(i, x) for i, x in self.moves if x != state[i]]

    def random_neighbor(self, state):
        nbrs = self.neighbors(state)
        i, x = nbrs[int(self.rng.integers(len(nbrs)))]
        return i, x

    @staticmethod
    def flip(state, i, x):
        s = list(state)
        s[i] = x
        return tuple(s)

    def best_neighbor(self, state, ev, exclude=None):
        best, best_score = None, -math.inf
        for i, x in self.neighbors(state):
            sc = ev.neighbors[i][x]
            if exclude is not None and self.flip(state, i, x) in exclude:
                continue
            if best is None or sc > best_score:
                best, best_score = (i, x), sc
        return best, best_score

    def result(self) -> SearchResult:
        if self.best_log is None:
            self.best_log = self.scorer.score(self.s0)
        verified = self.scorer.score(self.best)
        if not self.scorer.approximate and not _close(verified, self.best_log):
            raise AssertionError("best score failed re-verification")
        return SearchResult(dict(zip(self.vars, self.best)), verified, self.evals, self.evals_to_best,
                            self.peaks, self.first_peak, self.flagged, self.trace)


def better(a: float, b: float) -> bool:
    return a > b + IMPROVE_TOL


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    if a == b:
        return True
    if math.isinf(a) or math.isinf(b):
        return False
    return abs(math.expm1(a - b)) <= rel


def stochastic_hill_climb(scorer: Scorer, s0, config: SearchConfig | None = None) -> SearchResult:
    """With probability p_f step to a random neighbor; otherwise step to the
    best neighbor when it strictly improves, else to a random one."""
    config = config or SearchConfig()
    run = _Run(scorer, s0, config)
    s, known = run.s0, None
    while run.budget_left() and run.vars:
        ev = run.evaluate(s, known)
        if run.rng.random() < config.p_f:
            (i, x), move = run.random_neighbor(s), "random"
        else:
            (i, x), sc = run.best_neighbor(s, ev)
            move = "greedy"
            if not better(sc, ev.score):
                (i, x), move = run.random_neighbor(s), "stuck-random"
        known = float(ev.neighbors[i][x])
        s = run.flip(s, i, x)
        run.offer(s, known, run.evals)
        run.log(s, known, move)
    return run.result()


def pure_hill_climb_restart(scorer: Scorer, s0, config: SearchConfig | None = None) -> SearchResult:
    """Greedy ascent; at each peak flip every variable with probability
    ``restart_flip_prob`` (at least one) and climb again.  With
    ``config.restarts`` off the search stops at the first peak."""
    config = config or SearchConfig()
    run = _Run(scorer, s0, config)
    s, known = run.s0, None
    while run.budget_left() and run.vars:
        ev = run.evaluate(s, known)
        (i, x), sc = run.best_neighbor(s, ev)
        if better(sc, ev.score):
            known = float(sc)
            s = run.flip(s, i, x)
            run.offer(s, known, run.evals)
            run.log(s, known, "greedy")
            continue
        run.peaks += 1
        if run.first_peak is None:
            run.first_peak = ev.score
        run.log(s, ev.score, "peak")
        if not config.restarts:
            break
        s = _restart(run, s)
        known = None
        run.log(s, math.nan, "restart")
    return run.result()


def _restart(run: _Run, s):
    new = list(s)
    flipped = False
    for i, card in enumerate(run.cards):
        if run.rng.random() < run.config.restart_flip_prob:
            others = [x for x in range(card) if x != s[i]]
            new[i] = others[int(run.rng.integers(len(others)))]
            flipped = True
    if not flipped:
        i, x = run.random_neighbor(s)
        new[i] = x
    return tuple(new)


def taboo_search(scorer: Scorer, s0, config: SearchConfig | None = None) -> SearchResult:
    """Move to the best neighbor not visited before, even when it is worse.
    When every neighbor has been visited take ``taboo_random_kick`` random
    steps instead."""
    config = config or SearchConfig()
    run = _Run(scorer, s0, config)
    visited: set[tuple] = set()
    s, known = run.s0, None
    while run.budget_left() and run.vars:
        visited.add(s)
        ev = run.evaluate(s, known)
        move, sc = run.best_neighbor(s, ev, exclude=visited)
        if move is not None:
            known = float(sc)
            s = run.flip(s, *move)
            run.offer(s, known, run.evals)
            run.log(s, known, "taboo")
            continue
        for _ in range(config.taboo_random_kick):
            s = run.flip(s, *run.random_neighbor(s))
        known = None
        run.log(s, math.nan, "kick")
    return run.result()


SEARCHES = {
    "hill": pure_hill_climb_restart,
    "shill": stochastic_hill_climb,
    "taboo": taboo_search,
}
