import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajselect.errors import DimensionMismatch, StepAlignmentError
from trajselect.trace_model import (
    HashTokenizer,
    ReasoningTrace,
    StepText,
    TrajectoryRecord,
    extract_answer,
    extract_think_span,
    normalize_answer,
    parse_response,
    segment_steps,
    step_final_token_indices,
)

TOK = HashTokenizer()


@pytest.mark.parametrize("text, expected", [
    ("<think>A</think>B", ("A", "B")),
    ("no tags here", ("no tags here", "no tags here")),
    ("<think>A</think>B<think>C</think>", ("A", "B<think>C</think>")),
    ("<think>unterminated", ("<think>unterminated", "<think>unterminated")),
])
def test_extract_think_span(text, expected):
    assert extract_think_span(text) == expected


@pytest.mark.parametrize("text, expected", [
    ("a\n\nb\n\nc", ["a", "b", "c"]),
    ("a\n\n\n\nb", ["a", "b"]),
    ("", []),
    ("  \n\n \n\nx", ["x"]),
])
def test_segment_steps(text, expected):
    assert segment_steps(text) == expected


def test_step_indices_one_token_per_step():
    ids = TOK("ab\n\ncd")
    assert len(ids) == 3
    assert step_final_token_indices(ids, ["ab", "cd"], TOK) == [0, 2]


def test_step_indices_single_step_covers_all():
    ids = TOK("one two three")
    assert step_final_token_indices(ids, ["one two three"], TOK) == [len(ids) - 1]


def test_step_indices_misordered_raises():
    ids = TOK("ab\n\ncd")
    with pytest.raises(StepAlignmentError):
        step_final_token_indices(ids, ["cd", "ab"], TOK)


def test_step_indices_empty_step_raises():
    with pytest.raises(StepAlignmentError):
        step_final_token_indices(TOK("ab"), ["  "], TOK)


@pytest.mark.parametrize("text, expected", [
    ("so \\boxed{42}.", "42"),
    ("x=\\boxed{\\frac{1}{2}}", "\\frac{1}{2}"),
    ("no box", None),
    ("\\boxed{1} then \\boxed{2}", "2"),
    ("\\boxed{1} then \\boxed{2", "1"),
])
def test_extract_answer(text, expected):
    assert extract_answer(text) == expected


def test_normalize_answer():
    assert normalize_answer("  $ 4  2 $ ") == "4 2"
    assert normalize_answer(None) is None
    assert normalize_answer("$$") == ""


def test_parse_response_skips_open_tag_tokens():
    # a step reading "think" must not align inside the <think> tag itself
    tr = parse_response("<think>think\n\nmore</think>\\boxed{3}", TOK)
    assert tr.step_texts == ["think", "more"]
    ids = TOK(tr.raw_text)
    assert ids[tr.steps[0].final_token_index] == TOK.token_id("think")
    assert tr.steps[0].final_token_index >= len(TOK("<think>"))
    assert extract_answer(tr.answer_text) == "3"


_word = st.text(alphabet="abcdefgh xyz", min_size=1, max_size=12).filter(lambda s: s.strip())


@settings(max_examples=60, deadline=None)
@given(st.lists(_word, min_size=1, max_size=8))
def test_parse_response_indices_strictly_increasing(steps):
    text = "<think>" + "\n\n".join(steps) + "</think>done"
    tr = parse_response(text, TOK)
    idx = [s.final_token_index for s in tr.steps]
    assert len(idx) == len(steps)
    assert all(b > a for a, b in zip(idx, idx[1:]))
    assert idx[-1] < len(TOK(text))


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=80))
def test_segment_steps_never_returns_blank(text):
    segs = segment_steps(text)
    assert all(s.strip() for s in segs)
    assert all("\n\n" not in s for s in segs)


def _trace(n):
    return ReasoningTrace("x", tuple(StepText(f"s{i}", i) for i in range(n)), "")


def test_record_is_read_only_and_checks_lengths():
    r = TrajectoryRecord("q", _trace(2), np.zeros((2, 3)), "1", 1)
    with pytest.raises(ValueError):
        r.step_hiddens[0, 0] = 1.0
    with pytest.raises(DimensionMismatch):
        TrajectoryRecord("q", _trace(3), np.zeros((2, 3)), "1", 1)
    with pytest.raises(DimensionMismatch):
        TrajectoryRecord("q", _trace(1), np.array([[np.nan, 0.0]]), "1", 1)
    with pytest.raises(ValueError):
        TrajectoryRecord("q", _trace(1), np.zeros((1, 3)), "1", 2)


def test_record_equality_and_with_outcome():
    a = TrajectoryRecord("q", _trace(2), np.ones((2, 3)), "1", 1)
    b = TrajectoryRecord("q", _trace(2), np.ones((2, 3)), "1", 1)
    assert a == b
    flipped = a.with_outcome(0)
    assert flipped != a and flipped.outcome == 0
    assert np.shares_memory(flipped.step_hiddens, a.step_hiddens) or np.array_equal(
        flipped.step_hiddens, a.step_hiddens)


def test_tokenizer_ids_in_range():
    tok = HashTokenizer(17)
    assert all(0 <= i < 17 for i in tok("Hello, world!\n\nAgain 123."))
    assert tok("a\n\nb")[1] == tok.token_id("\n\n")
