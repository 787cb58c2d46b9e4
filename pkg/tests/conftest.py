import pytest

_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record a criterion outcome; each criterion gets one line in the summary.

    A criterion checked by several parametrized cases passes only if all do.
    """
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        store.setdefault(number, (title, []))[1].append((ok, detail))
        print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_VERDICTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, outcomes = store[number]
        status = "PASS" if all(ok for ok, _ in outcomes) else "FAIL"
        details = " | ".join(d for _, d in outcomes)
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {details}")
