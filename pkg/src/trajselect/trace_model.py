"""Queries, trajectories, and the text procedures that turn a raw response
into scoreable steps.

A response looks like ``<think>step\\n\\nstep\\n\\n...</think>answer``. The
think span is cut into steps on blank lines; the hidden state of each
step's final token is what the verifier reads.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, StepAlignmentError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
STEP_DELIMITER = "\n\n"
BOXED = "\\boxed{"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    gold_answer: str

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class StepText:
    text: str
    final_token_index: int


@dataclass(frozen=True)
class ReasoningTrace:
    raw_text: str
    steps: tuple[StepText, ...]
    answer_text: str

    @property
    def step_texts(self) -> list[str]:
        return [s.text for s in self.steps]


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One candidate response with its step-final hidden states and label.

    ``step_hiddens`` is stored read-only: the sampler is frozen and nothing
    downstream may write into its activations.
    """

    query_id: str
    trace: ReasoningTrace
    step_hiddens: np.ndarray
    extracted_answer: str | None
    outcome: int
    benchmark: str = "default"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.array(self.step_hiddens, dtype=np.float64)
        if h.size == 0:
            h = h.reshape(0, h.shape[-1] if h.ndim == 2 else 0)
        if h.ndim != 2:
            raise DimensionMismatch(f"step_hiddens must be 2-D, got shape {h.shape}")
        if h.shape[0] != len(self.trace.steps):
            raise DimensionMismatch(
                f"{h.shape[0]} hidden vectors for {len(self.trace.steps)} steps"
            )
        if not np.all(np.isfinite(h)):
            raise DimensionMismatch("step_hiddens contain non-finite values")
        if self.outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {self.outcome!r}")
        h.setflags(write=False)
        object.__setattr__(self, "step_hiddens", h)

    @property
    def n_steps(self) -> int:
        return len(self.trace.steps)

    @property
    def response_text(self) -> str:
        return self.trace.raw_text

    def with_outcome(self, outcome: int) -> "TrajectoryRecord":
        return TrajectoryRecord(
            self.query_id, self.trace, self.step_hiddens, self.extracted_answer,
            outcome, self.benchmark, dict(self.meta),
        )

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return (
            self.query_id == other.query_id
            and self.trace == other.trace
            and self.extracted_answer == other.extracted_answer
            and self.outcome == other.outcome
            and self.benchmark == other.benchmark
            and self.step_hiddens.shape == other.step_hiddens.shape
            and np.array_equal(self.step_hiddens, other.step_hiddens)
        )

    __hash__ = None


# -- tokenization -----------------------------------------------------------

_TOKEN_RE = re.compile(r"\n\n|\w+|[^\w\s]")


class HashTokenizer:
    """Whitespace-and-punctuation tokenizer with hashed ids.

    Blank-line delimiters are kept as their own token so step boundaries
    survive tokenization.
    """

    def __init__(self, vocab_size: int = 4096):
        if vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        self.vocab_size = vocab_size

    def token_id(self, piece: str) -> int:
        return zlib.crc32(piece.encode("utf-8")) % self.vocab_size

    def spans(self, text: str) -> list[tuple[int, int, int]]:
        """Return ``(token_id, start, end)`` for every token in ``text``."""
        return [(self.token_id(m.group()), m.start(), m.end())
                for m in _TOKEN_RE.finditer(text)]

    def __call__(self, text: str) -> list[int]:
        return [self.token_id(m.group()) for m in _TOKEN_RE.finditer(text)]


# -- text procedures --------------------------------------------------------

def extract_think_span(response_text: str) -> tuple[str, str]:
    """Split a response into (reasoning trace, answer body).

    Uses the first ``<think>`` and the first ``</think>`` after it. When
    either tag is missing the whole text serves as both parts.
    """
    start = response_text.find(THINK_OPEN)
    if start < 0:
        return response_text, response_text
    body_start = start + len(THINK_OPEN)
    end = response_text.find(THINK_CLOSE, body_start)
    if end < 0:
        return response_text, response_text
    return response_text[body_start:end], response_text[end + len(THINK_CLOSE):]


def segment_steps(trace_text: str) -> list[str]:
    return [seg for seg in trace_text.split(STEP_DELIMITER) if seg.strip()]


def step_final_token_indices(
    full_token_ids: Sequence[int],
    step_texts: Sequence[str],
    tokenize: Callable[[str], list[int]],
    start: int = 0,
) -> list[int]:
    """Index of each step's last token inside the full response tokens.

    Steps are matched left to right as contiguous token runs, each search
    starting just past the previous step's final token (or at ``start``
    for the first step).
    """
    full = list(full_token_ids)
    out: list[int] = []
    cursor = start
    for k, text in enumerate(step_texts):
        pattern = list(tokenize(text))
        if not pattern:
            raise StepAlignmentError(f"step {k} produces no tokens")
        m = len(pattern)
        hit = -1
        for pos in range(cursor, len(full) - m + 1):
            if full[pos] == pattern[0] and full[pos:pos + m] == pattern:
                hit = pos
                break
        if hit < 0:
            raise StepAlignmentError(
                f"step {k} not found in token stream after index {cursor}"
            )
        last = hit + m - 1
        out.append(last)
        cursor = last + 1
    return out


def extract_answer(answer_text: str) -> str | None:
    """Content of the last balanced ``\\boxed{...}``, or None.

    An unterminated final box falls back to the previous occurrence.
    """
    pos = answer_text.rfind(BOXED)
    while pos >= 0:
        depth = 1
        i = pos + len(BOXED)
        while i < len(answer_text):
            c = answer_text[i]
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    return answer_text[pos + len(BOXED):i].strip()
            i += 1
        pos = answer_text.rfind(BOXED, 0, pos)
    return None


_WS_RE = re.compile(r"\s+")


def normalize_answer(answer: str | None) -> str | None:
    """Trim, collapse inner whitespace, drop one enclosing ``$...$`` pair."""
    if answer is None:
        return None
    s = _WS_RE.sub(" ", answer.strip())
    if len(s) >= 2 and s[0] == "$" and s[-1] == "$":
        s = s[1:-1].strip()
    return s


def parse_response(response_text: str, tokenizer: HashTokenizer) -> ReasoningTrace:
    trace_text, answer_text = extract_think_span(response_text)
    steps = segment_steps(trace_text)
    open_at = response_text.find(THINK_OPEN)
    tagged = open_at >= 0 and response_text.find(THINK_CLOSE, open_at + len(THINK_OPEN)) >= 0
    # skip the opening tag's own tokens so a step can never match inside it
    skip = len(tokenizer(response_text[:open_at + len(THINK_OPEN)])) if tagged else 0
    indices = step_final_token_indices(
        tokenizer(response_text), steps, tokenizer, start=skip
    )
    return ReasoningTrace(
        raw_text=response_text,
        steps=tuple(StepText(t, i) for t, i in zip(steps, indices)),
        answer_text=answer_text,
    )
