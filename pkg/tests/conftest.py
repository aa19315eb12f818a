import pytest

_CRITERIA: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            num, title = m.args
            entry = _CRITERIA.setdefault(num, {"title": title, "nodes": set(), "failed": False, "ran": 0, "notes": []})
            entry["nodes"].add(item.nodeid)


def pytest_runtest_logreport(report):
    for entry in _CRITERIA.values():
        if report.nodeid in entry["nodes"]:
            if report.failed or report.skipped:
                entry["failed"] = True
            if report.when == "call" and report.passed:
                entry["ran"] += 1
            for key, value in (report.user_properties if report.when == "call" else ()):
                if key == "note":
                    entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        if e["failed"]:
            status = "FAIL"
        elif e["ran"] < len(e["nodes"]):
            status = "NOT RUN"
        else:
            status = "PASS"
        line = f"criterion {num:2d} {status}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(12345)
