import os
from collections import defaultdict

import pytest

from doasim.pkpd import TABLE1_PATIENTS

_CRITERIA: dict[int, dict] = defaultdict(lambda: {"title": "", "outcomes": [], "notes": []})


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            num, title = mark.args
            _CRITERIA[num]["title"] = title


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA[mark.args[0]]["outcomes"].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        info = _CRITERIA[num]
        outs = info["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif all(o == "passed" for _, o in outs):
            status = "PASS"
        elif any(o == "failed" for _, o in outs):
            status = "FAIL"
        else:
            status = "SKIP"
        tr.write_line(f"criterion {num}: {status:7s} {info['title']} ({len(outs)} checks)")
        for note in info["notes"]:
            tr.write_line(f"    {note}")


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the terminal summary."""
    mark = request.node.get_closest_marker("criterion")

    def add(text):
        if mark is not None:
            _CRITERIA[mark.args[0]]["notes"].append(text)
    return add


@pytest.fixture(scope="session")
def patients():
    return TABLE1_PATIENTS


@pytest.fixture(scope="session")
def patient1():
    return TABLE1_PATIENTS[0]


@pytest.fixture
def no_jit_env():
    env = dict(os.environ)
    env["DOASIM_NO_JIT"] = "1"
    return env
