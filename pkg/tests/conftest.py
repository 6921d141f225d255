import numpy as np
import pytest

from phasesteer.synthgen import SynthConfig, generate


@pytest.fixture(scope="session")
def clean_ds():
    """Default synthetic dataset, noise-free, orthonormal mixing."""
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def small_ds():
    """Small, exactly periodic dataset without drifts: every planted period divides H+1."""
    return generate(SynthConfig(N=64, H=119, d_emb=12, n_pairs_true=2, n_distractors=0,
                                frequencies=(2 * np.pi / 40, 2 * np.pi / 60), amplitudes=(1.0, 0.7)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    """Log one acceptance criterion; the line is echoed again in the terminal summary."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
