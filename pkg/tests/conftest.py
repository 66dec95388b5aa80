import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance_report(request, capsys):
    """Print one pass/fail line for an acceptance criterion, now and in the summary."""

    def report(number: int, title: str, passed: bool, detail: str, seconds: float, budget: float):
        ok = passed and seconds < budget
        line = (f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                f"[{seconds:.1f}s / budget {budget:.0f}s]")
        request.config.stash[ACCEPTANCE_LINES].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
