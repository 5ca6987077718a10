import os
import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_report_header(config):
    from fri_lab import _kernels
    return f"fri_lab backend: {_kernels.BACKEND}"


@pytest.fixture
def tmp_run(tmp_path):
    return tmp_path / "run"


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record and print one ``C<k> PASS|FAIL: ...`` line per criterion."""
    def record(cid: str, passed: bool, detail: str) -> bool:
        line = f"{cid} {'PASS' if passed else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda l: int(re.match(r"C(\d+)", l).group(1))):
            terminalreporter.write_line(line)
