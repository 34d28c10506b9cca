import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# sweeps run serially on the 1-CPU test machine unless overridden
os.environ.setdefault("VIMSYNC_WORKERS", "1")


@pytest.fixture
def tmp_csv(tmp_path):
    return tmp_path / "out.csv"


# one line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def acceptance():
    def record(criterion: int, ok: bool, detail: str, part: str = ""):
        _ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name + ': ' if name else ''}{'ok' if good else 'FAIL'} ({d})" for name, good, d in parts)
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
