import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


@pytest.fixture(autouse=True)
def _criterion_line(request):
    """Print one PASS/FAIL line for tests tagged with a criterion number."""
    yield
    marker = request.node.get_closest_marker("criterion")
    if marker is None:
        return
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    note = getattr(request.node, "criterion_note", "")
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    line = f"[criterion {marker.args[0]:>2}] {'PASS' if ok else 'FAIL'}  {request.node.name}"
    if note:
        line += f"  ({note})"
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)
    else:
        print(line)
