import numpy as np
import pytest

from trajselect.sampler_sim import SynthConfig, generate_corpus
from trajselect.verifier import VerifierConfig

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    """Register an acceptance outcome; printed in the terminal summary."""
    _ACCEPTANCE.append((name, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture
def tiny_vcfg():
    return VerifierConfig(d_sampler=8, d_model=8, n_layers=1, n_heads=2, d_head_hidden=8,
                          max_steps=16, d_ff=16).validate()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SynthConfig(n_queries=12, candidates_per_query=4, steps_range=(2, 5),
                                       d_sampler=8, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
