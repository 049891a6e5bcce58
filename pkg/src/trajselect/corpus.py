"""Trajectory corpora: JSONL I/O, outcome labels, balancing, splitting."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._rng import keyed_rng
from .errors import DataError, EmptyClassError, SchemaError
from .trace_model import (
    HashTokenizer,
    Query,
    ReasoningTrace,
    StepText,
    TrajectoryRecord,
    extract_answer,
    extract_think_span,
    normalize_answer,
    parse_response,
)

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("query_id", "response_text", "step_hiddens", "gold_answer")


@dataclass
class Corpus:
    records: list[TrajectoryRecord]
    queries: dict[str, Query]
    seed: int = 0

    def __post_init__(self):
        for r in self.records:
            if r.query_id not in self.queries:
                raise DataError(f"record references unknown query {r.query_id!r}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_pos(self) -> int:
        return sum(r.outcome for r in self.records)

    @property
    def n_neg(self) -> int:
        return len(self.records) - self.n_pos

    def replace_records(self, records: list[TrajectoryRecord], seed: int | None = None) -> "Corpus":
        used = {r.query_id for r in records}
        queries = {k: q for k, q in self.queries.items() if k in used}
        return Corpus(list(records), queries, self.seed if seed is None else seed)

    def by_query(self) -> dict[str, list[TrajectoryRecord]]:
        """Records grouped by query, in first-appearance order."""
        groups: dict[str, list[TrajectoryRecord]] = {}
        for r in self.records:
            groups.setdefault(r.query_id, []).append(r)
        return groups


@dataclass
class CorpusStats:
    n_total: int
    n_pos: int
    n_neg: int
    step_count_histogram: dict[int, int] = field(default_factory=dict)
    single_step_fraction: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_count_histogram"] = {str(k): v for k, v in sorted(self.step_count_histogram.items())}
        return d


def corpus_stats(corpus: Corpus) -> CorpusStats:
    hist = Counter(r.n_steps for r in corpus.records)
    n = len(corpus.records)
    n_pos = corpus.n_pos
    single = hist.get(1, 0) / n if n else 0.0
    if hist.get(1, 0):
        log.info("%d trajectories have a single step (no blank-line split)", hist[1])
    return CorpusStats(n, n_pos, n - n_pos, dict(sorted(hist.items())), single)


def label_outcome(extracted_answer: str | None, gold_answer: str) -> int:
    if extracted_answer is None:
        return 0
    return int(normalize_answer(extracted_answer) == normalize_answer(gold_answer))


# -- ordering ---------------------------------------------------------------

def _record_key(r: TrajectoryRecord) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(r.query_id.encode("utf-8"))
    h.update(b"\0")
    h.update(r.response_text.encode("utf-8"))
    h.update(b"\0")
    h.update(np.ascontiguousarray(r.step_hiddens).tobytes())
    return h.digest()


def _rank(records: list[TrajectoryRecord], seed: int, purpose: str) -> list[int]:
    """Seeded order that depends only on record content, never on input order."""
    salt = f"{seed}:{purpose}".encode("utf-8")
    keys = [hashlib.blake2b(salt + _record_key(r), digest_size=8).digest() for r in records]
    return sorted(range(len(records)), key=lambda i: (keys[i], i))


def shuffle_records(records: list[TrajectoryRecord], seed: int) -> list[TrajectoryRecord]:
    return [records[i] for i in _rank(records, seed, "shuffle")]


def balance_downsample(corpus: Corpus, seed: int) -> Corpus:
    """Downsample the majority class to a 1:1 ratio, then shuffle.

    The minority class is kept whole. Which majority records survive and
    the final order are both content-keyed, so balancing an already
    balanced corpus with the same seed returns it unchanged.
    """
    pos = [r for r in corpus.records if r.outcome == 1]
    neg = [r for r in corpus.records if r.outcome == 0]
    if not pos or not neg:
        raise EmptyClassError(f"cannot balance: {len(pos)} positives, {len(neg)} negatives")
    if len(pos) > len(neg):
        pos = [pos[i] for i in sorted(_rank(pos, seed, "subsample")[:len(neg)])]
    elif len(neg) > len(pos):
        neg = [neg[i] for i in sorted(_rank(neg, seed, "subsample")[:len(pos)])]
    return corpus.replace_records(shuffle_records(pos + neg, seed), seed=seed)


def split_by_query(corpus: Corpus, eval_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Partition queries into (train, eval); candidate sets stay intact."""
    if not 0.0 <= eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in [0, 1)")
    qids = list(corpus.by_query())
    order = keyed_rng(seed, "split").permutation(len(qids))
    n_eval = int(math.floor(eval_fraction * len(qids) + 0.5))
    eval_ids = {qids[i] for i in order[:n_eval]}
    train = [r for r in corpus.records if r.query_id not in eval_ids]
    held = [r for r in corpus.records if r.query_id in eval_ids]
    return corpus.replace_records(train), corpus.replace_records(held)


def flip_labels(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Flip the outcome of ``round(fraction * n)`` records chosen at random."""
    n = len(corpus.records)
    k = int(math.floor(fraction * n + 0.5))
    flip = set(keyed_rng(seed, "flip").choice(n, size=k, replace=False).tolist()) if k else set()
    records = [r.with_outcome(1 - r.outcome) if i in flip else r
               for i, r in enumerate(corpus.records)]
    return corpus.replace_records(records)


# -- JSONL ------------------------------------------------------------------

def record_to_json(r: TrajectoryRecord, query: Query) -> dict:
    return {
        "query_id": r.query_id,
        "benchmark": r.benchmark,
        "query_text": query.text,
        "gold_answer": query.gold_answer,
        "response_text": r.response_text,
        "step_hiddens": r.step_hiddens.tolist(),
        "extracted_answer": r.extracted_answer,
        "outcome": r.outcome,
        "steps": [{"text": s.text, "final_token_index": s.final_token_index}
                  for s in r.trace.steps],
    }


def save_jsonl(corpus: Corpus, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in corpus.records:
            fh.write(json.dumps(record_to_json(r, corpus.queries[r.query_id])))
            fh.write("\n")


def _parse_record(obj, lineno: int, tokenizer: HashTokenizer, require_outcome: bool):
    if not isinstance(obj, dict):
        raise SchemaError("record is not a JSON object", lineno)
    for key in REQUIRED_FIELDS + (("outcome",) if require_outcome else ()):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", lineno)
    for key in ("query_id", "response_text", "gold_answer"):
        if not isinstance(obj[key], str):
            raise SchemaError(f"field {key!r} must be a string", lineno)
    text = obj["response_text"]
    try:
        if "steps" in obj:
            steps = tuple(StepText(str(s["text"]), int(s["final_token_index"])) for s in obj["steps"])
            trace = ReasoningTrace(text, steps, extract_think_span(text)[1])
        else:
            trace = parse_response(text, tokenizer)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad steps: {exc}", lineno) from exc
    extracted = obj["extracted_answer"] if "extracted_answer" in obj else extract_answer(trace.answer_text)
    if extracted is not None and not isinstance(extracted, str):
        raise SchemaError("extracted_answer must be a string or null", lineno)
    if "outcome" in obj:
        outcome = obj["outcome"]
        if isinstance(outcome, bool) or outcome not in (0, 1):
            raise SchemaError(f"outcome must be 0 or 1, got {outcome!r}", lineno)
    else:
        outcome = label_outcome(extracted, obj["gold_answer"])
    hidden = obj["step_hiddens"]
    if not isinstance(hidden, list) or not all(isinstance(v, list) for v in hidden):
        raise SchemaError("step_hiddens must be a list of lists", lineno)
    try:
        arr = np.array(hidden, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 0)
        record = TrajectoryRecord(
            query_id=obj["query_id"], trace=trace, step_hiddens=arr,
            extracted_answer=extracted, outcome=int(outcome),
            benchmark=str(obj.get("benchmark", "default")),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), lineno) from exc
    return record, obj.get("query_text") or obj["query_id"], obj["gold_answer"]


def load_jsonl(path, seed: int = 0, tokenizer: HashTokenizer | None = None,
               require_outcome: bool = True) -> Corpus:
    """Read a corpus file.

    ``steps``, ``extracted_answer`` and ``query_text`` are derived when
    absent. With ``require_outcome=False`` a missing ``outcome`` is
    computed from the extracted and gold answers.
    """
    tokenizer = tokenizer or HashTokenizer()
    records: list[TrajectoryRecord] = []
    queries: dict[str, Query] = {}
    dim = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from exc
            record, qtext, gold = _parse_record(obj, lineno, tokenizer, require_outcome)
            if record.n_steps:
                if dim is None:
                    dim = record.step_hiddens.shape[1]
                elif record.step_hiddens.shape[1] != dim:
                    raise SchemaError(
                        f"hidden dimension {record.step_hiddens.shape[1]} != {dim}", lineno)
            prev = queries.get(record.query_id)
            if prev is None:
                queries[record.query_id] = Query(record.query_id, qtext, gold)
            elif prev.gold_answer != gold:
                raise SchemaError(f"conflicting gold answers for {record.query_id!r}", lineno)
            records.append(record)
    return Corpus(records, queries, seed)
