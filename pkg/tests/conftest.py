import numpy as np
import pytest

from cgfm.dataio import make_windows
from cgfm.evalkit import synth_sinmix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """Short noisy sinmix, 2 channels, L=16, Fh=8."""
    return make_windows(synth_sinmix(400, 2, 7), 16, 8)


@pytest.fixture
def sinmix_csv(tmp_path):
    raw = synth_sinmix(300, 2, 3)
    path = tmp_path / "series.csv"
    lines = ["date,a,b"]
    for i, (a, b) in enumerate(raw):
        lines.append(f"2021-01-{1 + i // 24:02d} {i % 24:02d}:00:00,{float(a)!r},{float(b)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log(capsys):
    """Record one PASS/FAIL line per acceptance criterion and show it immediately."""

    def log(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
