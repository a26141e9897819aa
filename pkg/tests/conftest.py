import numpy as np
import pytest

from sparsesig.paths import PiecewiseLinearPath, generate_path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_path():
    return generate_path("random-uniform", 12, 3, seed=7)


def unit_line(a=1.0) -> PiecewiseLinearPath:
    return PiecewiseLinearPath(np.array([[0.0], [a]]))


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def report(request):
    """Record one summary line per acceptance criterion, printed after the run."""
    def _record(key: str, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        _ACCEPTANCE_LINES[key] = f"{key}: {status}  {detail}"
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        num = key.split()[-1]
        digits = "".join(c for c in num if c.isdigit())
        return int(digits), num

    for key in sorted(_ACCEPTANCE_LINES, key=order):
        terminalreporter.write_line(_ACCEPTANCE_LINES[key])
