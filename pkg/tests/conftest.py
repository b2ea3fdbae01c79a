import logging

import pytest

from trustci import Workspace
from trustci.workspace import DEFAULT_LABELS

logging.getLogger("trustci").setLevel(logging.ERROR)

CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    CRITERIA[n] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        verdict, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")


@pytest.fixture(scope="session")
def clean_ws(tmp_path_factory):
    """A workspace holding one completed default run. Treat as read-only."""
    ws = Workspace.init(tmp_path_factory.mktemp("clean"))
    run = ws.run()
    assert run.completed
    return ws, run


@pytest.fixture
def fresh_ws(tmp_path):
    return Workspace.init(tmp_path / "ws")


@pytest.fixture
def labels():
    return dict(DEFAULT_LABELS)
