"""Deterministic stand-in for the frozen sampler LLM.

A fixed random tanh recurrence plays the role of the sampler's last hidden
layer. :func:`generate_corpus` writes synthetic reasoning responses, encodes
them, and plants a label-dependent offset on one reserved hidden channel at
every step-final token. The encoder never writes to that channel, so with
``noise_std=0`` the labels are exactly separable along it.

Sampling temperature, top-p and friends are not modelled; the generator's
text is arbitrary and only its shape (think span, blank-line steps, boxed
answer) matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import keyed_rng
from .corpus import Corpus, label_outcome
from .errors import ConfigError, VocabError
from .trace_model import (
    HashTokenizer,
    Query,
    TrajectoryRecord,
    extract_answer,
    parse_response,
)


@dataclass(frozen=True, eq=False)
class SamplerParams:
    embedding: np.ndarray   # (V, D)
    mix: np.ndarray         # (D, D)
    seed: int
    signal_axis: int

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def signal_direction(self) -> np.ndarray:
        u = np.zeros(self.dim)
        u[self.signal_axis] = 1.0
        return u


def make_sampler(seed: int, vocab_size: int = 4096, d_sampler: int = 32) -> SamplerParams:
    if vocab_size < 1 or d_sampler < 2:
        raise ConfigError("sampler needs vocab_size >= 1 and d_sampler >= 2")
    axis = int(keyed_rng(seed, "sampler.axis", vocab_size, d_sampler).integers(d_sampler))
    emb = np.tanh(keyed_rng(seed, "sampler.embedding", vocab_size, d_sampler)
                  .normal(size=(vocab_size, d_sampler)))
    mix = keyed_rng(seed, "sampler.mix", vocab_size, d_sampler).normal(
        scale=0.9 / np.sqrt(d_sampler), size=(d_sampler, d_sampler))
    emb[:, axis] = 0.0
    mix[axis, :] = 0.0
    mix[:, axis] = 0.0
    emb.setflags(write=False)
    mix.setflags(write=False)
    return SamplerParams(emb, mix, seed, axis)


def encode(sampler: SamplerParams, token_ids) -> np.ndarray:
    """Per-token hidden states: h0 = E[t0], h_i = tanh(M h_{i-1} + E[t_i])."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= sampler.vocab_size):
        raise VocabError(f"token id out of range [0, {sampler.vocab_size})")
    out = np.empty((ids.size, sampler.dim))
    if ids.size == 0:
        return out
    E, M = sampler.embedding, sampler.mix
    h = E[ids[0]].copy()
    out[0] = h
    for i in range(1, ids.size):
        h = np.tanh(M @ h + E[ids[i]])
        out[i] = h
    return out


@dataclass(frozen=True)
class SynthConfig:
    n_queries: int = 200
    candidates_per_query: int = 8
    steps_range: tuple[int, int] = (3, 8)
    signal_strength: float = 1.0
    noise_std: float = 0.5
    base_correct_rate: float = 0.6
    seed: int = 0
    vocab_size: int = 4096
    d_sampler: int = 32
    n_distractors: int = 3
    absent_rate: float = 0.1
    benchmarks: tuple[str, ...] = ("synth-a", "synth-b", "synth-c")

    def __post_init__(self):
        object.__setattr__(self, "steps_range", tuple(self.steps_range))
        object.__setattr__(self, "benchmarks", tuple(self.benchmarks))

    def validate(self) -> "SynthConfig":
        lo, hi = self.steps_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid steps_range {self.steps_range}")
        if self.n_queries < 1 or self.candidates_per_query < 1:
            raise ConfigError("n_queries and candidates_per_query must be >= 1")
        if self.signal_strength < 0 or self.noise_std < 0:
            raise ConfigError("signal_strength and noise_std must be >= 0")
        if not 0.0 < self.base_correct_rate < 1.0:
            raise ConfigError("base_correct_rate must be in (0, 1)")
        if not 0.0 <= self.absent_rate <= 1.0:
            raise ConfigError("absent_rate must be in [0, 1]")
        if self.n_distractors < 1:
            raise ConfigError("n_distractors must be >= 1")
        if not self.benchmarks:
            raise ConfigError("at least one benchmark name is required")
        if self.d_sampler < 2 or self.vocab_size < 2:
            raise ConfigError("d_sampler and vocab_size must be >= 2")
        return self


_VERBS = ("add", "subtract", "multiply", "compare", "check", "rewrite", "factor", "expand")
_NOUNS = ("term", "sum", "product", "bound", "case", "root", "ratio", "angle", "side")
_LINKS = ("so", "then", "hence", "thus", "next", "wait", "alternatively")


def _step_text(rng: np.random.Generator, t: int) -> str:
    a, b = rng.integers(1, 100, size=2)
    words = [
        f"Step {t + 1}:",
        str(rng.choice(_LINKS)),
        "we",
        str(rng.choice(_VERBS)),
        "the",
        str(rng.choice(_NOUNS)),
        f"{a} and {b}",
    ]
    if rng.random() < 0.5:
        words.append(f"giving {int(a) + int(b)}")
    return " ".join(words) + "."


def _query(cfg: SynthConfig, q: int) -> tuple[Query, list[str]]:
    rng = keyed_rng(cfg.seed, "query", q)
    gold = int(rng.integers(10, 1000))
    pool = [v for v in range(10, 1000) if v != gold]
    distractors = [str(v) for v in rng.choice(pool, size=cfg.n_distractors, replace=False)]
    a, b = rng.integers(1, 100, size=2)
    text = f"Problem {q}: find the value that follows from {a} and {b}."
    return Query(f"q{q:05d}", text, str(gold)), distractors


def generate_trajectory(cfg: SynthConfig, sampler: SamplerParams, tokenizer: HashTokenizer,
                        query: Query, distractors: list[str], q: int, j: int,
                        benchmark: str) -> TrajectoryRecord:
    # label, text and noise come from separate streams so text never leaks y
    y = int(keyed_rng(cfg.seed, "label", q, j).random() < cfg.base_correct_rate)
    text_rng = keyed_rng(cfg.seed, "text", q, j)
    lo, hi = cfg.steps_range
    n_steps = int(text_rng.integers(lo, hi + 1))
    steps = [_step_text(text_rng, t) for t in range(n_steps)]

    ans_rng = keyed_rng(cfg.seed, "answer", q, j)
    if y == 1:
        body = f"The final answer is \\boxed{{{query.gold_answer}}}."
    elif ans_rng.random() < cfg.absent_rate:
        body = "I could not finish the computation."
    else:
        body = f"The final answer is \\boxed{{{distractors[int(ans_rng.integers(len(distractors)))]}}}."
    response = "<think>" + "\n\n".join(steps) + "</think>" + body

    trace = parse_response(response, tokenizer)
    hidden = encode(sampler, tokenizer(response))
    idx = [s.final_token_index for s in trace.steps]
    step_h = hidden[idx].copy()
    noise = keyed_rng(cfg.seed, "noise", q, j).normal(size=len(idx))
    step_h[:, sampler.signal_axis] += cfg.signal_strength * (2 * y - 1) + cfg.noise_std * noise

    extracted = extract_answer(trace.answer_text)
    assert label_outcome(extracted, query.gold_answer) == y
    return TrajectoryRecord(query.id, trace, step_h, extracted, y, benchmark,
                            {"candidate_index": j})


def generate_corpus(cfg: SynthConfig) -> Corpus:
    cfg.validate()
    sampler = make_sampler(cfg.seed, cfg.vocab_size, cfg.d_sampler)
    tokenizer = HashTokenizer(cfg.vocab_size)
    records: list[TrajectoryRecord] = []
    queries: dict[str, Query] = {}
    for q in range(cfg.n_queries):
        query, distractors = _query(cfg, q)
        queries[query.id] = query
        bench = cfg.benchmarks[q % len(cfg.benchmarks)]
        for j in range(cfg.candidates_per_query):
            records.append(generate_trajectory(cfg, sampler, tokenizer, query,
                                               distractors, q, j, bench))
    return Corpus(records, queries, cfg.seed)
