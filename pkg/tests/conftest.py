import pytest

_LINES: dict = {}


class CriterionReport:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.details: list[str] = []
        _LINES[number] = f"CRITERION {number:>2} FAIL  {title} (did not finish)"

    def note(self, text: str) -> None:
        self.details.append(text)

    def finish(self, ok: bool) -> bool:
        detail = "; ".join(self.details)
        line = f"CRITERION {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}"
        _LINES[self.number] = f"{line} [{detail}]" if detail else line
        print(_LINES[self.number])
        return ok


@pytest.fixture
def criterion():
    return CriterionReport


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_LINES):
        terminalreporter.write_line(_LINES[k])
