import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; ``check`` also asserts."""

    class Reporter:
        def line(self, criterion, status, detail):
            text = f"[{status}] criterion {criterion}: {detail}"
            _LINES.append(text)
            print(text)

        def check(self, criterion, ok, detail):
            self.line(criterion, "PASS" if ok else "FAIL", detail)
            assert ok, detail

    return Reporter()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for text in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(text)
