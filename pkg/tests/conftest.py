import re
import time

import pytest

_LINES = pytest.StashKey[dict]()


class Criterion:
    """Records one acceptance verdict and asserts it."""

    def __init__(self, number: int, store: dict):
        self.number = number
        self.store = store
        self.start = time.perf_counter()
        self.done = False

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def check(self, title: str, passed: bool, detail: str, limit_s: float | None = None):
        t = self.elapsed
        timing = f"{t:.1f}s" + (f" (limit {limit_s:g}s)" if limit_s is not None else "")
        ok = bool(passed) and (limit_s is None or t < limit_s)
        self.store[self.number] = f"[{'PASS' if ok else 'FAIL'}] {self.number:2d}. {title}: {detail}; {timing}"
        self.done = True
        assert ok, self.store[self.number]


@pytest.fixture
def criterion(request):
    m = re.match(r"test_c(\d+)_", request.node.name)
    store = request.config.stash.setdefault(_LINES, {})
    c = Criterion(int(m.group(1)), store)
    yield c
    if not c.done:
        store[c.number] = f"[FAIL] {c.number:2d}. {request.node.name}: raised before a verdict; {c.elapsed:.1f}s"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
    passed = sum(v.startswith("[PASS]") for v in lines.values())
    terminalreporter.write_line(f"{passed}/{len(lines)} criteria pass")
