import pytest

from procflow import prompts
from procflow.dsl import parse

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, description): acceptance criterion check")
    config.addinivalue_line("markers", "live: needs a reachable chat-completion endpoint and API key")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, description = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[number] = (status, description)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, description = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {description}")


@pytest.fixture(scope="session")
def examples():
    return prompts.default_examples()


@pytest.fixture(scope="session")
def gold_graphs(examples):
    out = []
    for ex in examples:
        graph, diags = parse(ex.graph)
        assert not diags
        out.append(graph)
    return out


@pytest.fixture
def restaurant(examples):
    """A fresh copy of the restaurant gold graph (tests may mutate it)."""
    return parse(examples[0].graph)[0]
