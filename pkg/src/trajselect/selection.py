"""Best-of-N selection, the baselines, and accuracy bookkeeping."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._rng import keyed_rng
from .errors import EmptyCandidates
from .trace_model import Query, TrajectoryRecord, normalize_answer
from .verifier import VerifierConfig, VerifierParams, trajectory_scores

METHODS = ("trajselector", "majority", "random", "oracle")


@dataclass
class CandidateSet:
    query: Query
    candidates: list[TrajectoryRecord]
    scores: list[float] | None = None  # trajectory scores; None until scored

    def __post_init__(self):
        if not self.candidates:
            raise EmptyCandidates(f"query {self.query.id!r} has no candidates")
        for c in self.candidates:
            if c.query_id != self.query.id:
                raise ValueError(f"candidate for {c.query_id!r} in set for {self.query.id!r}")

    @property
    def outcomes(self) -> list[int]:
        return [c.outcome for c in self.candidates]

    @property
    def answers(self) -> list[str | None]:
        return [c.extracted_answer for c in self.candidates]


@dataclass(frozen=True)
class BenchmarkResult:
    name: str
    n_correct: int
    n_total: int

    def __post_init__(self):
        if not 0 <= self.n_correct <= self.n_total:
            raise ValueError(f"need 0 <= n_correct <= n_total, got {self.n_correct}/{self.n_total}")

    @property
    def accuracy_pct(self) -> float:
        return 100.0 * self.n_correct / self.n_total


def aggregate_mean(step_scores: Sequence[float]) -> float:
    """Arithmetic mean of step scores; an empty trajectory scores 0."""
    if len(step_scores) == 0:
        return 0.0
    return float(math.fsum(step_scores) / len(step_scores))


def best_of_n(scores: Sequence[float]) -> int:
    if len(scores) == 0:
        raise EmptyCandidates("best_of_n needs at least one score")
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


def majority_vote(answers: Sequence[str | None]) -> int:
    """Index of the first candidate carrying the most frequent answer.

    Answers are compared after normalisation. Ties go to the answer seen
    first. Missing answers never win unless every answer is missing.
    """
    if len(answers) == 0:
        raise EmptyCandidates("majority_vote needs at least one answer")
    counts: dict[str, int] = {}
    first: dict[str, int] = {}
    for i, a in enumerate(answers):
        key = normalize_answer(a)
        if key is None:
            continue
        counts[key] = counts.get(key, 0) + 1
        first.setdefault(key, i)
    if not counts:
        return 0
    winner = max(counts, key=lambda k: (counts[k], -first[k]))
    return first[winner]


def random_select(n: int, seed: int, query_id: str) -> int:
    if n < 1:
        raise EmptyCandidates("random_select needs n >= 1")
    return int(keyed_rng(seed, "random_select", query_id).integers(n))


def pass_at_n(outcomes: Sequence[int]) -> int:
    if len(outcomes) == 0:
        raise EmptyCandidates("pass_at_n needs at least one outcome")
    return int(any(outcomes))


def macro_average(results: Sequence[BenchmarkResult]) -> float:
    """Mean of per-benchmark accuracy percentages, rounded to 2 decimals."""
    if not results:
        raise ValueError("macro_average needs at least one benchmark")
    for r in results:
        if r.n_total < 1:
            raise ValueError(f"benchmark {r.name!r} has no items")
    return round(math.fsum(r.accuracy_pct for r in results) / len(results), 2)


# -- scoring ----------------------------------------------------------------

def score_records(records: Sequence[TrajectoryRecord], params: VerifierParams,
                  vcfg: VerifierConfig) -> list[float]:
    return [aggregate_mean(s) for s in trajectory_scores(params, vcfg, records)]


def group_candidates(corpus) -> list[CandidateSet]:
    return [CandidateSet(corpus.queries[qid], recs) for qid, recs in corpus.by_query().items()]


def score_candidate_sets(sets: Sequence[CandidateSet], params: VerifierParams,
                         vcfg: VerifierConfig, workers: int = 1) -> None:
    """Attach trajectory scores to every set in place.

    With ``workers > 1`` sets are scored on a thread pool; results are
    assigned in input order, so output never depends on the worker count.
    """
    if workers <= 1:
        for cs in sets:
            cs.scores = score_records(cs.candidates, params, vcfg)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda cs: score_records(cs.candidates, params, vcfg), sets))
    for cs, sc in zip(sets, results):
        cs.scores = sc


def select(cs: CandidateSet, method: str, n: int | None = None, seed: int = 0) -> int:
    """Index chosen by ``method`` among the first ``n`` candidates.

    For ``oracle`` this returns a correct candidate whenever one exists.
    """
    n = len(cs.candidates) if n is None else n
    if not 1 <= n <= len(cs.candidates):
        raise ValueError(f"n={n} outside 1..{len(cs.candidates)}")
    if method == "trajselector":
        if cs.scores is None:
            raise ValueError("candidate set has not been scored")
        return best_of_n(cs.scores[:n])
    if method == "majority":
        return majority_vote(cs.answers[:n])
    if method == "random":
        return random_select(n, seed, cs.query.id)
    if method == "oracle":
        outs = cs.outcomes[:n]
        return outs.index(1) if any(outs) else 0
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def selected_correct(cs: CandidateSet, method: str, n: int | None = None, seed: int = 0) -> int:
    return cs.candidates[select(cs, method, n, seed)].outcome


def accuracy(sets: Sequence[CandidateSet], method: str, n: int | None = None, seed: int = 0) -> float:
    if not sets:
        raise ValueError("no candidate sets")
    return 100.0 * sum(selected_correct(cs, method, n, seed) for cs in sets) / len(sets)


def benchmark_results(sets: Sequence[CandidateSet], method: str, n: int | None = None,
                      seed: int = 0) -> list[BenchmarkResult]:
    """Per-benchmark correct/total counts, benchmarks in first-seen order."""
    tally: dict[str, list[int]] = {}
    for cs in sets:
        bench = cs.candidates[0].benchmark
        t = tally.setdefault(bench, [0, 0])
        t[0] += selected_correct(cs, method, n, seed)
        t[1] += 1
    return [BenchmarkResult(b, c, t) for b, (c, t) in tally.items()]


def rank_corpus(records: Sequence[TrajectoryRecord], params: VerifierParams,
                vcfg: VerifierConfig, k: int) -> list[TrajectoryRecord]:
    """The ``k`` highest-scoring records, best first; ties keep input order."""
    if not 0 <= k <= len(records):
        raise ValueError(f"k={k} outside 0..{len(records)}")
    scores = score_records(records, params, vcfg)
    order = sorted(range(len(records)), key=lambda i: (-scores[i], i))
    return [records[i] for i in order[:k]]
