import contextlib

import pytest

_ACCEPTANCE_LINES: list[str] = []


class _Reporter:
    def __init__(self):
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    @contextlib.contextmanager
    def criterion(self, label: str):
        self.details = []
        try:
            yield self
        except BaseException:
            _ACCEPTANCE_LINES.append(f"FAIL  {label}  " + "; ".join(self.details))
            print(_ACCEPTANCE_LINES[-1])
            raise
        _ACCEPTANCE_LINES.append(f"PASS  {label}  " + "; ".join(self.details))
        print(_ACCEPTANCE_LINES[-1])


@pytest.fixture
def acceptance():
    return _Reporter()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
