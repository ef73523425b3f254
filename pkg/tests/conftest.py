import pytest

# criterion id -> list of outcomes, filled from tests marked @pytest.mark.acceptance("AC<n>", "...")
_acceptance = {}
# free-form figures reported next to the verdicts (not asserted)
_notes = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    cid, title = marker.args
    passed = call.excinfo is None
    _acceptance.setdefault(cid, [title, []])[1].append((item.name, passed))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")

    def order(cid):
        return int(cid[2:]) if cid[2:].isdigit() else 0

    for cid in sorted(_acceptance, key=order):
        title, results = _acceptance[cid]
        ok = all(p for _, p in results)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid}  {title}  ({sum(p for _, p in results)}/{len(results)} checks)")
    for cid, text in _notes:
        terminalreporter.write_line(f"note  {cid}  {text}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_note(request):
    marker = request.node.get_closest_marker("acceptance")
    cid = marker.args[0] if marker else request.node.name

    def note(text):
        _notes.append((cid, text))
        print(f"{cid}: {text}")

    return note
