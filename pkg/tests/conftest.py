import pytest

_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; the summary prints one line per criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(n, []).append((bool(ok), detail))
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        entries = _ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in entries) else "FAIL"
        detail = "; ".join(d for _, d in entries)
        terminalreporter.write_line(f"ACCEPTANCE {n} {status}  {detail}")
