import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        name, ok, dt, why = results[num]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {name} ({dt:.1f}s)"
        terminalreporter.write_line(line + (f" -- {why}" if why else ""))
