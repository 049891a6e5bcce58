"""Experiment plumbing shared by the CLI and the scripts.

The corpus is split by query first so held-out candidate sets stay whole.
The training side then gets its optional label flips, 1:1 balancing and
seeded shuffle.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .corpus import Corpus, balance_downsample, flip_labels, split_by_query
from .selection import (
    METHODS,
    CandidateSet,
    accuracy,
    benchmark_results,
    group_candidates,
    macro_average,
    score_candidate_sets,
)
from .training import TrainLogRow, train
from .verifier import VerifierConfig, VerifierParams

log = logging.getLogger(__name__)

RESULTS_HEADER = ("method", "n", "accuracy_pct")
TABLE_HEADER = ("benchmark", "n_correct", "n_total")
TRAINLOG_HEADER = ("step", "epoch", "loss", "grad_norm", "wall_ms")


def worker_count() -> int:
    raw = os.environ.get("TRAJSELECT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer TRAJSELECT_THREADS=%r", raw)
        return 1


def split(corpus: Corpus, cfg: RunConfig) -> tuple[Corpus, Corpus]:
    if cfg.eval_fraction == 0:
        log.warning("eval_fraction=0: evaluating on the training queries")
        return corpus, corpus
    return split_by_query(corpus, cfg.eval_fraction, cfg.eval_seed)


def training_corpus(corpus: Corpus, cfg: RunConfig) -> Corpus:
    train_part, _ = split(corpus, cfg)
    if cfg.label_flip_fraction:
        train_part = flip_labels(train_part, cfg.label_flip_fraction, cfg.train.seed)
    return balance_downsample(train_part, cfg.train.seed)


def eval_corpus(corpus: Corpus, cfg: RunConfig) -> Corpus:
    return split(corpus, cfg)[1]


def run_training(corpus: Corpus, cfg: RunConfig) -> tuple[VerifierParams, list[TrainLogRow]]:
    cfg = cfg.resolved()
    return train(training_corpus(corpus, cfg), cfg.train, cfg.verifier)


def evaluate(sets: Sequence[CandidateSet], n_values: Sequence[int], seed: int,
             methods: Sequence[str] = METHODS) -> list[tuple[str, int, float | None]]:
    """Accuracy for every (method, n); None where some query has < n candidates."""
    available = min(len(cs.candidates) for cs in sets)
    rows = []
    for method in methods:
        for n in n_values:
            if n > available:
                log.warning("skipping %s at n=%d: only %d candidates available", method, n, available)
                rows.append((method, n, None))
            else:
                rows.append((method, n, accuracy(sets, method, n, seed)))
    return rows


def scored_sets(corpus: Corpus, params: VerifierParams | None, vcfg: VerifierConfig) -> list[CandidateSet]:
    sets = group_candidates(corpus)
    if params is not None:
        score_candidate_sets(sets, params, vcfg, workers=worker_count())
    return sets


# -- CSV --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for method, n, acc in rows:
            w.writerow((method, n, "" if acc is None else f"{acc:.4f}"))


def load_results_csv(path) -> list[tuple[str, int, float | None]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected results header")
        return [(m, int(n), float(a) if a else None) for m, n, a in reader]


def write_table_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in results:
            w.writerow((r.name, r.n_correct, r.n_total))


def load_table_csv(path):
    from .selection import BenchmarkResult
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != TABLE_HEADER:
            raise ValueError(f"{path}: unexpected table header")
        return [BenchmarkResult(b, int(c), int(t)) for b, c, t in reader]


def write_wide_table(sets, methods, n_values, seed, path) -> list[list[str]]:
    """Method rows x benchmark columns plus the macro average column."""
    available = min(len(cs.candidates) for cs in sets)
    lines = []
    benches = None
    for n in n_values:
        if n > available:
            continue
        for method in methods:
            res = benchmark_results(sets, method, n, seed)
            if benches is None:
                benches = [r.name for r in res]
                lines.append(["method", "n", *[f"{b} (/{r.n_total})" for b, r in zip(benches, res)], "avg_pct"])
            lines.append([method, str(n), *[str(r.n_correct) for r in res], f"{macro_average(res):.2f}"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(lines)
    return lines


def write_trainlog_csv(history: Sequence[TrainLogRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINLOG_HEADER)
        for r in history:
            w.writerow((r.step, r.epoch, _fmt(r.loss), _fmt(r.grad_norm), f"{r.wall_ms:.3f}"))


def load_trainlog_csv(path) -> list[TrainLogRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != TRAINLOG_HEADER:
            raise ValueError(f"{path}: unexpected training log header")
        return [TrainLogRow(int(s), int(e), float(l), float(g), float(w)) for s, e, l, g, w in reader]


def output_path(cfg: RunConfig, out_dir, stem: str, ext: str) -> Path:
    return Path(out_dir) / f"{stem}-{cfg.config_hash()}.{ext}"


def is_finite_rows(rows) -> bool:
    return all(a is None or math.isfinite(a) for _, _, a in rows)
