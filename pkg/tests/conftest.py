import mpmath
import numpy as np
import pytest

mpmath.mp.dps = 40


def mp_ncdf(x) -> float:
    return float(mpmath.ncdf(mpmath.mpf(x)))


def mp_nquantile(p) -> float:
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail, seconds=None):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        if seconds is not None:
            line += f"  [{seconds:.1f} s]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
