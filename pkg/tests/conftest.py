"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

from collections import defaultdict

import pytest

_PARTS = defaultdict(list)      # criterion -> [(label, passed, summary)]


class Recorder:
    def __call__(self, criterion: int, passed: bool, summary: str, part: str | None = None):
        _PARTS[criterion].append((part, bool(passed), summary))
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}"
              f"{f' ({part})' if part else ''}: {summary}")


@pytest.fixture(scope="session")
def record():
    return Recorder()


def criterion_lines():
    lines = []
    for c in sorted(_PARTS):
        parts = _PARTS[c]
        ok = all(p[1] for p in parts)
        if len(parts) == 1 and parts[0][0] is None:
            body = parts[0][2]
        else:
            body = "; ".join(f"{label} {'ok' if good else 'FAILS'}: {s}" for label, good, s in parts)
        lines.append(f"[{'PASS' if ok else 'FAIL'}] criterion {c}: {body}")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = criterion_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
