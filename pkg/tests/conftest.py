"""Shared pytest plumbing.

The acceptance suite records one line per criterion through
record_criterion; the hook below replays the scoreboard at the end of
the run so the verdicts stay visible even when stdout is captured.
"""

_CRITERIA = []


def record_criterion(name: str, passed: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}"
    if detail:
        line += f" :: {detail}"
    _CRITERIA.append(line)
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in _CRITERIA:
        terminalreporter.write_line(line)
