from __future__ import annotations

import json

import pytest

from scimetrics.corpus import AuthorshipRecord, PaperRecord, Role, build_corpus

ACCEPTANCE_LINES: list[str] = []


def paper(pid, year=2000, refs=(), kws=("k1", "k2"), field="F0", **kw):
    return PaperRecord(pid, year, field, frozenset(kws), frozenset(refs), **kw)


def team(pid, roles, corresponding=0, ids=None):
    """Authorships for ``pid``; ``roles`` is a string like 'LLS' (lead/support by position)."""
    ids = ids or [f"{pid}-a{i}" for i in range(len(roles))]
    return [
        AuthorshipRecord(pid, aid, i + 1, i == corresponding, Role.LEAD if r == "L" else Role.SUPPORT)
        for i, (aid, r) in enumerate(zip(ids, roles))
    ]


def make_corpus(papers, authorships=()):
    return build_corpus(papers, list(authorships))


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


@pytest.fixture
def record():
    def _record(criterion: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
