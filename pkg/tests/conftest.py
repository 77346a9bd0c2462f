import os

# single-threaded BLAS keeps training bitwise reproducible
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Print and remember one PASS/FAIL line per acceptance criterion."""

    def _report(number, name, ok, detail):
        line = f"[ACCEPTANCE] criterion {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        _ACCEPTANCE_LINES.append((number, line))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        seen = {n for n, _ in _ACCEPTANCE_LINES}
        lines = list(_ACCEPTANCE_LINES) + [
            (n, f"[ACCEPTANCE] criterion {n}: FAIL (no result; the test errored or was not selected)")
            for n in range(1, 13) if n not in seen
        ]
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
