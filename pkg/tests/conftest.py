import pytest

from rmpcdrive.bench import build_suite
from rmpcdrive.vehicle import ChassisParams


@pytest.fixture(scope="session")
def suite(request):
    """Default-design tables, cached across runs in the pytest cache (digest-checked)."""
    cache = request.config.cache.mkdir("rmpcdrive-tables")
    return build_suite(ChassisParams(), 1.3, cache)


@pytest.fixture(scope="session")
def table(suite):
    return suite.table


@pytest.fixture(scope="session")
def table4(suite):
    return suite.table4


# -- acceptance summary ------------------------------------------------------------

CRITERIA = {
    1: "timing separation (offline vs online)",
    2: "nested ellipsoids",
    3: "robust stability",
    4: "LQR oracle equivalence",
    5: "steering increment bound",
    6: "steering total variation",
    7: "collision free",
    8: "IDM equilibrium and convergence",
    9: "Euler discretization order",
    10: "APF unit values",
    11: "determinism",
}
_RESULTS: dict[int, tuple[bool, str]] = {}
_ACCEPTANCE_COLLECTED = []


@pytest.fixture
def record():
    """``record(n, ok, detail)`` stores the outcome of acceptance criterion ``n``."""

    def _record(n: int, ok: bool, detail: str) -> None:
        _RESULTS[n] = (bool(ok), detail)

    return _record


def pytest_collection_modifyitems(session, config, items):
    _ACCEPTANCE_COLLECTED[:] = [it for it in items if it.fspath.basename == "test_acceptance.py"]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_COLLECTED:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in _RESULTS:
            ok, detail = _RESULTS[n]
            tr.write_line(f"[{n:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        else:
            tr.write_line(f"[{n:2d}] FAIL (not reached) {title}")
