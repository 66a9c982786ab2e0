import pytest

from iltber import _pykernels

try:
    from iltber import _kernels
except ImportError:  # pragma: no cover - extension not built
    _kernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
BACKENDS.append(pytest.param(_kernels, id="cython",
                             marks=pytest.mark.skipif(_kernels is None, reason="extension not built")))

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def acceptance_line():
    """Record one pass/fail line for the acceptance summary."""
    def record(criterion: str, ok: bool, detail: str):
        _ACCEPTANCE.append((criterion, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
