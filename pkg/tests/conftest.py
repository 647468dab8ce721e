import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class CriterionReport:
    def __init__(self, number: int):
        self.number = number
        self.checks: list[tuple[str, bool]] = []

    def check(self, label: str, ok) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def line(self) -> str:
        detail = "; ".join(f"{label} [{'ok' if ok else 'x'}]" for label, ok in self.checks) or "raised before any check"
        return f"criterion {self.number:>2}: {'PASS' if self.passed else 'FAIL'} | {detail}"


@pytest.fixture
def criterion(request):
    """Collects the checks of one acceptance criterion and reports a single pass/fail line."""
    marker = request.node.get_closest_marker("criterion")
    report = CriterionReport(marker.args[0])
    yield report
    _CRITERIA[report.number] = report.line()
    print("\n" + report.line())


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
