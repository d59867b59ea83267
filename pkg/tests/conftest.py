import pytest

ACCEPTANCE_KEY = pytest.StashKey[dict]()
CRITERIA = {
    1: "gradient suite",
    2: "compositing conservation",
    3: "EMD oracle equivalence",
    4: "straight-through contract",
    5: "InfoInv shift invariance",
    6: "discrete collapse and rescue",
    7: "continuous collapse and rescue",
    8: "learned vs pre-defined continuous gauge",
    9: "top-k trend",
    10: "InfoInv gain",
    11: "zero-weight equivalence",
    12: "preset determinism",
}


@pytest.fixture
def record(request):
    """``record(n, ok, detail)`` stores the outcome of acceptance criterion ``n``."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def _record(n: int, ok: bool, detail: str) -> bool:
        results[n] = (bool(ok), detail)
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[----] {n:2d}. {title}: not run")
