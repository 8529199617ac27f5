import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from carleman_lab.domain import DomainSpec, build_grid

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def unit_spec():
    return DomainSpec()


@pytest.fixture
def small_grid(unit_spec):
    return build_grid(unit_spec, [17, 9, 9, 9])


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def fitted_order(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str, seconds: float) -> str:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
