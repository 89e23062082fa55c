import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

import warcgen  # noqa: E402

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _isolated_home(tmp_path, monkeypatch):
    monkeypatch.setenv("WARC_DISTILL_HOME", str(tmp_path / "home"))


@pytest.fixture(scope="session")
def small_site():
    return warcgen.synthetic_site(40, 4, seed=11)


@pytest.fixture(scope="session")
def small_collection(tmp_path_factory, small_site):
    d = tmp_path_factory.mktemp("small")
    warcgen.write_collection(d, small_site, n_files=3)
    return d


# -- acceptance reporting --------------------------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "title")`` get one PASS/FAIL line
# per criterion at the end of the run; a criterion spread over several tests
# passes only if all of them pass.

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not (report.failed or report.skipped)):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "failed": []})
    if report.failed:
        entry["ok"] = False
        entry["failed"].append(item.name)
    elif report.skipped:
        entry["ok"] = False
        entry["failed"].append(item.name + " (skipped)")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"criterion {number:>2} {status}  {entry['title']}"
        if entry["failed"]:
            line += "  [" + ", ".join(entry["failed"]) + "]"
        terminalreporter.write_line(line)
