import numpy as np
import pytest

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    """Record a criterion outcome for the end-of-run summary, then assert it."""

    def _report(key, passed, detail):
        prev = ACCEPTANCE.get(key)
        if prev is not None:
            passed = passed and prev[0]
            detail = f"{prev[1]}; {detail}"
        ACCEPTANCE[key] = (bool(passed), detail)
        print(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
