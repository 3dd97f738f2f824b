import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture()
def criterion():
    """Record one acceptance line; printed now and again in the terminal summary."""

    def record(number: int, name: str, ok: bool | None, detail: str) -> bool:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2} {status}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
