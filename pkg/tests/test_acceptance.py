"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line and registers it for
the terminal summary. Run on its own with::

    python -m pytest tests/test_acceptance.py -v -s
"""

import csv
import functools
import itertools
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from trajselect import cli, harness
from trajselect.config import RunConfig, load_config
from trajselect.corpus import Corpus, balance_downsample
from trajselect.errors import GradCheckFailure
from trajselect.sampler_sim import SynthConfig, generate_corpus
from trajselect.selection import (
    METHODS,
    BenchmarkResult,
    CandidateSet,
    macro_average,
    pass_at_n,
    select,
    selected_correct,
)
from trajselect.trace_model import Query, ReasoningTrace, StepText, TrajectoryRecord
from trajselect.training import TrainConfig, buffer_loss, grad_check, make_batch
from trajselect.verifier import init_params

ROOT = Path(__file__).resolve().parents[1]
E2E_SEEDS = (0, 1, 2)
ABLATION_SEEDS = (0, 1, 2, 3, 4)


def _run_config(seed: int, candidates: int = 8, loss_kind: str = "buffer", flip: float = 0.0) -> RunConfig:
    synth = SynthConfig(n_queries=500, candidates_per_query=candidates, signal_strength=1.0,
                        noise_std=0.5, seed=seed)
    return RunConfig(synth=synth, train=TrainConfig(seed=seed, loss_kind=loss_kind),
                     eval_seed=seed, label_flip_fraction=flip).resolved()


@functools.lru_cache(maxsize=None)
def _corpus(seed: int, candidates: int = 8) -> Corpus:
    return generate_corpus(_run_config(seed, candidates).synth)


def _trained_sets(cfg: RunConfig, corpus: Corpus) -> list[CandidateSet]:
    params, _ = harness.run_training(corpus, cfg)
    return harness.scored_sets(harness.eval_corpus(corpus, cfg), params, cfg.verifier)


def _acc(sets, method, n=None, seed=0):
    return 100.0 * sum(selected_correct(cs, method, n, seed) for cs in sets) / len(sets)


# -- 1 ----------------------------------------------------------------------

def test_loss_golden_values():
    uniform = buffer_loss([(1 / 3, 1 / 3, 1 / 3)], [1])
    err = abs(uniform + math.log(2 / 3))
    absorbed = max(buffer_loss([(0.0, 0.0, 1.0)], [y]) for y in (0, 1))
    ok = err <= 1e-9 and absorbed <= 1e-9
    record_criterion("loss golden values", ok,
                     f"|L(uniform,1) + ln(2/3)| = {err:.1e}; all-buffer loss = {absorbed:.1e}")
    assert ok


# -- 2 ----------------------------------------------------------------------

def test_gradient_fidelity():
    worst, n_checked, failures = 0.0, 0, []
    for seed in range(10):
        loss_kind = ("buffer", "binary_bce")[seed % 2]
        cfg = _run_config(seed, loss_kind=loss_kind)
        vcfg = cfg.verifier
        records = generate_corpus(replace(cfg.synth, n_queries=1, candidates_per_query=4)).records
        batch = make_batch(records, vcfg.max_steps)
        try:
            report = grad_check(init_params(vcfg, seed), vcfg, batch, 1e-4, loss_kind, 50, seed)
        except GradCheckFailure as exc:
            report = exc.report
            failures.append(seed)
        worst = max(worst, report.max_rel_error)
        n_checked += report.n_checked
    ok = not failures and worst < 1e-4
    record_criterion("gradient fidelity", ok,
                     f"10 configs, {n_checked} coordinates, max rel error {worst:.2e} (< 1e-4)")
    assert ok


# -- 3 ----------------------------------------------------------------------

TABLE_TOTALS = (40, 30, 30, 100, 30, 30)
TABLE_ROWS = {
    "TrajSelector": ((38, 21, 18, 31, 11, 18), 58.78),
    "Majority Voting": ((36, 20, 17, 25, 8, 18), 54.17),
    "Random Selection": ((34, 17, 12, 17, 8, 16), 46.44),
}


def test_table_arithmetic():
    got = {}
    for name, (counts, _) in TABLE_ROWS.items():
        got[name] = macro_average([BenchmarkResult(f"b{i}", c, t)
                                   for i, (c, t) in enumerate(zip(counts, TABLE_TOTALS))])
    ok = all(abs(got[k] - v[1]) <= 0.01 for k, v in TABLE_ROWS.items())
    record_criterion("table arithmetic", ok,
                     ", ".join(f"{k} {got[k]:.2f} (printed {v[1]:.2f})" for k, v in TABLE_ROWS.items()))
    assert ok


# -- 4 ----------------------------------------------------------------------

@pytest.mark.slow
def test_end_to_end_synthetic_learning():
    ts, rnd, violations = [], [], 0
    for seed in E2E_SEEDS:
        sets = _trained_sets(_run_config(seed), _corpus(seed))
        ts.append(_acc(sets, "trajselector"))
        rnd.append(_acc(sets, "random", seed=seed))
        violations += sum(selected_correct(cs, "trajselector") > pass_at_n(cs.outcomes[:8]) for cs in sets)
    gap = np.mean(ts) - np.mean(rnd)
    ok = gap >= 10.0 and violations == 0
    record_criterion("end-to-end synthetic learning", ok,
                     f"trajselector {np.mean(ts):.2f} vs random {np.mean(rnd):.2f} "
                     f"(gap {gap:.2f} pp >= 10), per-seed {ts} vs {rnd}, pass@8 violations {violations}")
    assert ok


# -- 5 ----------------------------------------------------------------------

@pytest.mark.slow
def test_buffer_loss_ablation():
    rows = []
    for seed in ABLATION_SEEDS:
        row = {"seed": seed}
        for kind in ("buffer", "binary_bce"):
            sets = _trained_sets(_run_config(seed, loss_kind=kind, flip=0.3), _corpus(seed))
            row[kind] = _acc(sets, "trajselector")
        row["random"] = _acc(sets, "random", seed=seed)
        rows.append(row)
    print("\nseed  buffer  binary_bce  random")
    for r in rows:
        print(f"{r['seed']:>4}  {r['buffer']:>6.1f}  {r['binary_bce']:>10.1f}  {r['random']:>6.1f}")
    mb = np.mean([r["buffer"] for r in rows])
    mc = np.mean([r["binary_bce"] for r in rows])
    print(f"mean  {mb:>6.1f}  {mc:>10.1f}")
    ok = mb >= mc
    record_criterion("buffer-loss ablation", ok,
                     f"30% flipped labels, {len(rows)} seeds: buffer mean {mb:.2f} vs binary_bce mean {mc:.2f} "
                     f"(per seed {[r['buffer'] for r in rows]} vs {[r['binary_bce'] for r in rows]})")
    assert ok


# -- 6 ----------------------------------------------------------------------

@pytest.mark.slow
def test_scaling_behavior():
    n_values = (1, 2, 4, 8, 16)
    seed = 0
    sets = _trained_sets(_run_config(seed, candidates=16), _corpus(seed, 16))
    pass_curve = [_acc(sets, "oracle", n) for n in n_values]
    ts_curve = [_acc(sets, "trajselector", n) for n in n_values]
    monotone = all(b >= a for a, b in zip(pass_curve, pass_curve[1:]))
    ok = monotone and ts_curve[-1] >= ts_curve[0]
    record_criterion("scaling behavior", ok,
                     f"pass@N {pass_curve} (monotone: {monotone}); trajselector {ts_curve} "
                     f"(@16 {ts_curve[-1]:.1f} >= @1 {ts_curve[0]:.1f})")
    assert ok


# -- 7 ----------------------------------------------------------------------

def _pattern_set(pattern, scores):
    q = Query("q", "text", "1")
    trace = ReasoningTrace("x", (StepText("s", 0),), "")
    recs = [TrajectoryRecord("q", trace, np.zeros((1, 2)), "1" if y else str(i + 2), y)
            for i, y in enumerate(pattern)]
    return CandidateSet(q, recs, list(scores))


def test_oracle_dominance_exhaustive():
    rng = np.random.default_rng(0)
    checked, bad = 0, 0
    for n in range(1, 6):
        for pattern in itertools.product((0, 1), repeat=n):
            for trial in range(20):
                cs = _pattern_set(pattern, rng.random(n))
                bound = pass_at_n(pattern)
                for method in METHODS:
                    bad += cs.candidates[select(cs, method, seed=trial)].outcome > bound
                    checked += 1
    ok = bad == 0
    record_criterion("oracle dominance", ok,
                     f"{checked} (pattern, scores, method) cases over all 2^N patterns, N <= 5; violations {bad}")
    assert ok


# -- 8 ----------------------------------------------------------------------

def _pipeline(cfg_path: Path, out: Path) -> None:
    for cmd in ("synth", "train", "eval"):
        assert cli.main([cmd, "-c", str(cfg_path), "-o", str(out)]) == 0


def _trainlog_without_clock(path: Path) -> list[list[str]]:
    # wall-clock milliseconds are the one column that cannot repeat
    with open(path, newline="") as fh:
        return [row[:4] for row in csv.reader(fh)]


@pytest.mark.slow
def test_determinism(tmp_path):
    cfg_path = ROOT / "configs" / "default.yaml"
    h = load_config(cfg_path).resolved().config_hash()
    a, b = tmp_path / "a", tmp_path / "b"
    _pipeline(cfg_path, a)
    _pipeline(cfg_path, b)
    compared, diff = [], []
    for p in sorted(a.iterdir()):
        if p.name.startswith("trainlog-"):
            continue
        compared.append(p.name)
        if p.read_bytes() != (b / p.name).read_bytes():
            diff.append(p.name)
    log_name = f"trainlog-{h}.csv"
    log_same = _trainlog_without_clock(a / log_name) == _trainlog_without_clock(b / log_name)
    ok = not diff and log_same and f"verifier-{h}.json" in compared and f"results-{h}.csv" in compared
    record_criterion("determinism", ok,
                     f"{len(compared)} files byte-identical across two runs (differing: {diff or 'none'}); "
                     f"training log identical except wall_ms: {log_same}")
    assert ok


# -- 9 ----------------------------------------------------------------------

def test_corpus_balancing():
    skewed = generate_corpus(SynthConfig(n_queries=60, candidates_per_query=8, steps_range=(1, 3),
                                         base_correct_rate=0.8, seed=7))
    once = balance_downsample(skewed, seed=3)
    twice = balance_downsample(once, seed=3)
    ok = once.n_pos == once.n_neg == skewed.n_neg and twice.records == once.records
    record_criterion("corpus balancing", ok,
                     f"{skewed.n_pos}:{skewed.n_neg} -> {once.n_pos}:{once.n_neg}; "
                     f"second pass unchanged: {twice.records == once.records}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
