import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajselect.corpus import label_outcome
from trajselect.errors import ConfigError, VocabError
from trajselect.sampler_sim import SynthConfig, encode, generate_corpus, make_sampler


def test_encode_deterministic_and_bounded():
    s = make_sampler(7, vocab_size=50, d_sampler=6)
    ids = [3, 1, 4, 1, 5, 9, 2, 6]
    a, b = encode(s, ids), encode(make_sampler(7, 50, 6), ids)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) < 1.0)


def test_encode_single_token_is_embedding():
    s = make_sampler(0, vocab_size=20, d_sampler=4)
    assert np.array_equal(encode(s, [11])[0], s.embedding[11])


def test_encode_rejects_bad_ids():
    s = make_sampler(0, vocab_size=20, d_sampler=4)
    with pytest.raises(VocabError):
        encode(s, [20])
    with pytest.raises(VocabError):
        encode(s, [-1])


def test_signal_axis_untouched_by_encoder():
    s = make_sampler(3, vocab_size=30, d_sampler=5)
    h = encode(s, list(range(30)))
    assert np.all(h[:, s.signal_axis] == 0.0)
    assert np.linalg.norm(s.signal_direction) == 1.0


def test_invalid_config():
    with pytest.raises(ConfigError):
        SynthConfig(steps_range=(5, 3)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(steps_range=(0, 3)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(base_correct_rate=1.0).validate()


def _tiny(**kw):
    base = dict(n_queries=6, candidates_per_query=4, steps_range=(2, 4), d_sampler=6, vocab_size=64)
    base.update(kw)
    return SynthConfig(**base)


def test_corpus_shape_and_labels():
    cfg = _tiny()
    c = generate_corpus(cfg)
    assert len(c) == cfg.n_queries * cfg.candidates_per_query
    for r in c.records:
        lo, hi = cfg.steps_range
        assert lo <= r.n_steps <= hi
        assert r.step_hiddens.shape == (r.n_steps, cfg.d_sampler)
        assert label_outcome(r.extracted_answer, c.queries[r.query_id].gold_answer) == r.outcome


def test_corpus_bit_identical_across_runs():
    a, b = generate_corpus(_tiny(seed=5)), generate_corpus(_tiny(seed=5))
    assert a.records == b.records
    assert generate_corpus(_tiny(seed=6)).records != a.records


def test_noiseless_signal_is_linearly_separable():
    cfg = _tiny(noise_std=0.0, n_queries=20)
    c = generate_corpus(cfg)
    axis = make_sampler(cfg.seed, cfg.vocab_size, cfg.d_sampler).signal_axis
    probe = [int(np.all(r.step_hiddens[:, axis] > 0)) for r in c.records]
    assert probe == [r.outcome for r in c.records]


def test_zero_signal_carries_no_label_information():
    cfg = _tiny(signal_strength=0.0, noise_std=0.0, n_queries=10)
    c = generate_corpus(cfg)
    axis = make_sampler(cfg.seed, cfg.vocab_size, cfg.d_sampler).signal_axis
    assert all(np.all(r.step_hiddens[:, axis] == 0.0) for r in c.records)


def test_signal_sign_shared_across_steps():
    cfg = _tiny(noise_std=0.0, signal_strength=2.0)
    c = generate_corpus(cfg)
    axis = make_sampler(cfg.seed, cfg.vocab_size, cfg.d_sampler).signal_axis
    for r in c.records:
        col = r.step_hiddens[:, axis]
        assert np.all(col == col[0])


def test_positive_rate_monte_carlo():
    # 10k trajectories; within 3 standard errors of 0.5
    cfg = SynthConfig(n_queries=100, candidates_per_query=100, steps_range=(1, 1), d_sampler=4,
                      vocab_size=64, base_correct_rate=0.5, seed=11)
    c = generate_corpus(cfg)
    n = len(c)
    se = np.sqrt(0.25 / n)
    assert abs(c.n_pos / n - 0.5) < 3 * se


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 31), min_size=1, max_size=20))
def test_encode_prefix_stable(seed, ids):
    s = make_sampler(seed, vocab_size=32, d_sampler=4)
    full = encode(s, ids)
    assert np.array_equal(encode(s, ids[:-1]), full[:-1])
