"""Publication corpus: JSONL loading, validation and citation indexing."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

MIN_YEAR = 1800
MAX_YEAR = 2100


class CorpusError(ValueError):
    """Raised when input records are malformed or inconsistent."""


class Role(str, Enum):
    LEAD = "lead"
    SUPPORT = "support"


@dataclass(frozen=True)
class PaperRecord:
    paper_id: str
    year: int
    field_id: str
    keywords: frozenset[str] = frozenset()
    references: frozenset[str] = frozenset()
    is_funded: bool = False
    grant_count: int = 0
    grant_amount: float = 0.0

    def to_json(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "year": self.year,
            "field_id": self.field_id,
            "keywords": sorted(self.keywords),
            "references": sorted(self.references),
            "is_funded": self.is_funded,
            "grant_count": self.grant_count,
            "grant_amount": self.grant_amount,
        }


@dataclass(frozen=True)
class AuthorshipRecord:
    paper_id: str
    author_id: str
    position: int
    is_corresponding: bool
    role: Role

    @property
    def is_lead(self) -> bool:
        return self.role is Role.LEAD

    def to_json(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "author_id": self.author_id,
            "position": self.position,
            "is_corresponding": self.is_corresponding,
            "role": self.role.value,
        }


@dataclass
class Corpus:
    """Immutable-after-load collection of papers and authorships.

    ``papers`` preserves file order. ``self_citations_removed`` counts
    references to the paper itself that were stripped during loading.
    """

    papers: dict[str, PaperRecord]
    authorships: list[AuthorshipRecord]
    self_citations_removed: int = 0
    _team: dict[str, tuple[AuthorshipRecord, ...]] = field(default_factory=dict, repr=False)
    _by_author: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        team: dict[str, list[AuthorshipRecord]] = defaultdict(list)
        by_author: dict[str, list[str]] = defaultdict(list)
        for a in self.authorships:
            team[a.paper_id].append(a)
            by_author[a.author_id].append(a.paper_id)
        self._team = {pid: tuple(sorted(rows, key=lambda r: r.position)) for pid, rows in team.items()}
        self._by_author = {aid: tuple(pids) for aid, pids in by_author.items()}

    def __len__(self) -> int:
        return len(self.papers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.papers == other.papers and self.authorships == other.authorships

    def team(self, paper_id: str) -> tuple[AuthorshipRecord, ...]:
        """Authorships of a paper ordered by position (empty for zero-author papers)."""
        return self._team.get(paper_id, ())

    def papers_of(self, author_id: str) -> tuple[str, ...]:
        return self._by_author.get(author_id, ())

    @property
    def author_ids(self) -> list[str]:
        return list(self._by_author)

    def has_author(self, author_id: str) -> bool:
        return author_id in self._by_author

    def years(self) -> tuple[int, int] | None:
        if not self.papers:
            return None
        ys = [p.year for p in self.papers.values()]
        return min(ys), max(ys)


@dataclass(frozen=True)
class CitationIndex:
    """Bidirectional citation adjacency restricted to in-corpus papers."""

    cites: Mapping[str, frozenset[str]]
    cited_by: Mapping[str, frozenset[tuple[str, int]]]
    years: Mapping[str, int]
    dropped_references: int = 0
    year_anomalies: int = 0

    def __contains__(self, paper_id: str) -> bool:
        return paper_id in self.years

    def citers(self, paper_id: str) -> frozenset[str]:
        return frozenset(c for c, _ in self.cited_by.get(paper_id, ()))

    def references(self, paper_id: str) -> frozenset[str]:
        return self.cites.get(paper_id, frozenset())

    @property
    def n_edges(self) -> int:
        return sum(len(v) for v in self.cites.values())


@dataclass(frozen=True)
class ValidationReport:
    self_citations_removed: int = 0
    year_order_anomalies: int = 0
    zero_keyword_papers: int = 0
    zero_author_papers: int = 0
    dropped_references: int = 0

    @property
    def n_anomalies(self) -> int:
        return (
            self.self_citations_removed
            + self.year_order_anomalies
            + self.zero_keyword_papers
            + self.zero_author_papers
            + self.dropped_references
        )

    def to_json(self) -> dict:
        return {
            "self_citations_removed": self.self_citations_removed,
            "year_order_anomalies": self.year_order_anomalies,
            "zero_keyword_papers": self.zero_keyword_papers,
            "zero_author_papers": self.zero_author_papers,
            "dropped_references": self.dropped_references,
        }


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise CorpusError(f"{where}: missing key {key!r}")
    value = obj[key]
    # bool is an int subclass; reject it where an int is expected
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        raise CorpusError(f"{where}: key {key!r} has wrong type {type(value).__name__}")
    return value


def _parse_paper(obj: dict, where: str, min_year: int, max_year: int) -> tuple[PaperRecord, int]:
    pid = _require(obj, "paper_id", str, where)
    year = _require(obj, "year", int, where)
    if not min_year <= year <= max_year:
        raise CorpusError(f"{where}: year {year} outside [{min_year}, {max_year}]")
    field_id = _require(obj, "field_id", str, where)
    keywords = _require(obj, "keywords", list, where)
    refs = _require(obj, "references", list, where)
    if not all(isinstance(k, str) for k in keywords) or not all(isinstance(r, str) for r in refs):
        raise CorpusError(f"{where}: keywords and references must be strings")
    is_funded = obj.get("is_funded", False)
    grant_count = obj.get("grant_count", 0)
    grant_amount = obj.get("grant_amount", 0.0)
    if not isinstance(is_funded, bool):
        raise CorpusError(f"{where}: is_funded must be a boolean")
    if isinstance(grant_count, bool) or not isinstance(grant_count, int) or grant_count < 0:
        raise CorpusError(f"{where}: grant_count must be a non-negative integer")
    if isinstance(grant_amount, bool) or not isinstance(grant_amount, (int, float)) or grant_amount < 0:
        raise CorpusError(f"{where}: grant_amount must be a non-negative number")
    if not is_funded and (grant_count != 0 or grant_amount != 0):
        raise CorpusError(f"{where}: unfunded paper {pid} carries grant data")
    ref_set = frozenset(refs)
    n_self = int(pid in ref_set)
    if n_self:
        ref_set = ref_set - {pid}
    paper = PaperRecord(
        paper_id=pid,
        year=year,
        field_id=field_id,
        keywords=frozenset(keywords),
        references=ref_set,
        is_funded=is_funded,
        grant_count=grant_count,
        grant_amount=float(grant_amount),
    )
    return paper, n_self


def _parse_authorship(obj: dict, where: str) -> AuthorshipRecord:
    pid = _require(obj, "paper_id", str, where)
    aid = _require(obj, "author_id", str, where)
    position = _require(obj, "position", int, where)
    if position < 1:
        raise CorpusError(f"{where}: position must be >= 1")
    corr = obj.get("is_corresponding", False)
    if not isinstance(corr, bool):
        raise CorpusError(f"{where}: is_corresponding must be a boolean")
    role = _require(obj, "role", str, where)
    try:
        role_enum = Role(role.lower())
    except ValueError:
        raise CorpusError(f"{where}: role must be 'lead' or 'support', got {role!r}") from None
    return AuthorshipRecord(pid, aid, position, corr, role_enum)


def _check_teams(authorships: list[AuthorshipRecord]) -> None:
    team: dict[str, list[AuthorshipRecord]] = defaultdict(list)
    for a in authorships:
        team[a.paper_id].append(a)
    for pid, rows in team.items():
        positions = sorted(r.position for r in rows)
        if positions != list(range(1, len(rows) + 1)):
            raise CorpusError(f"paper {pid}: author positions {positions} are not a contiguous 1..n sequence")
        if not any(r.is_lead for r in rows):
            raise CorpusError(f"paper {pid}: no lead author")


def build_corpus(
    papers: Iterable[PaperRecord],
    authorships: Iterable[AuthorshipRecord],
    self_citations_removed: int = 0,
) -> Corpus:
    """Assemble a Corpus from in-memory records, enforcing cross-record invariants."""
    by_id: dict[str, PaperRecord] = {}
    for p in papers:
        if p.paper_id in by_id:
            raise CorpusError(f"duplicate paper_id {p.paper_id}")
        if p.paper_id in p.references:
            p = replace(p, references=p.references - {p.paper_id})
            self_citations_removed += 1
        by_id[p.paper_id] = p
    rows = list(authorships)
    seen: set[tuple[str, str]] = set()
    for a in rows:
        if a.paper_id not in by_id:
            raise CorpusError(f"authorship references unknown paper {a.paper_id}")
        key = (a.paper_id, a.author_id)
        if key in seen:
            raise CorpusError(f"duplicate authorship ({a.paper_id}, {a.author_id})")
        seen.add(key)
    _check_teams(rows)
    return Corpus(by_id, rows, self_citations_removed)


def load_corpus(
    papers_path: str | Path,
    authorships_path: str | Path,
    min_year: int = MIN_YEAR,
    max_year: int = MAX_YEAR,
) -> Corpus:
    """Load ``papers.jsonl`` and ``authorships.jsonl`` into an indexed Corpus.

    Raises CorpusError naming the file and line of the first malformed
    record, a duplicate paper_id, or an authorship whose paper_id is unknown.
    """
    papers_path, authorships_path = Path(papers_path), Path(authorships_path)
    by_id: dict[str, PaperRecord] = {}
    n_self = 0
    for lineno, obj in _iter_jsonl(papers_path):
        where = f"{papers_path}:{lineno}"
        paper, s = _parse_paper(obj, where, min_year, max_year)
        if paper.paper_id in by_id:
            raise CorpusError(f"{where}: duplicate paper_id {paper.paper_id}")
        by_id[paper.paper_id] = paper
        n_self += s
    rows = []
    for lineno, obj in _iter_jsonl(authorships_path):
        where = f"{authorships_path}:{lineno}"
        a = _parse_authorship(obj, where)
        if a.paper_id not in by_id:
            raise CorpusError(f"{where}: authorship references unknown paper {a.paper_id}")
        rows.append(a)
    if n_self:
        logger.warning("removed %d self-citation(s)", n_self)
    return build_corpus(by_id.values(), rows, n_self)


def write_corpus(corpus: Corpus, papers_path: str | Path, authorships_path: str | Path) -> None:
    with open(papers_path, "w", encoding="utf-8") as fh:
        for p in corpus.papers.values():
            fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")
    with open(authorships_path, "w", encoding="utf-8") as fh:
        for a in corpus.authorships:
            fh.write(json.dumps(a.to_json(), sort_keys=True) + "\n")


def build_citation_index(corpus: Corpus) -> CitationIndex:
    cites: dict[str, frozenset[str]] = {}
    cited_by: dict[str, set[tuple[str, int]]] = defaultdict(set)
    dropped = 0
    anomalies = 0
    papers = corpus.papers
    for pid, paper in papers.items():
        kept = []
        for ref in paper.references:
            cited = papers.get(ref)
            if cited is None:
                dropped += 1
                continue
            kept.append(ref)
            cited_by[ref].add((pid, paper.year))
            if paper.year < cited.year:
                anomalies += 1
        if kept:
            cites[pid] = frozenset(kept)
    if dropped:
        logger.warning("dropped %d reference(s) to papers outside the corpus", dropped)
    return CitationIndex(
        cites=cites,
        cited_by={k: frozenset(v) for k, v in cited_by.items()},
        years={pid: p.year for pid, p in papers.items()},
        dropped_references=dropped,
        year_anomalies=anomalies,
    )


def validate(corpus: Corpus, index: CitationIndex | None = None) -> ValidationReport:
    index = index if index is not None else build_citation_index(corpus)
    zero_kw = sum(1 for p in corpus.papers.values() if not p.keywords)
    zero_auth = sum(1 for pid in corpus.papers if not corpus.team(pid))
    return ValidationReport(
        self_citations_removed=corpus.self_citations_removed,
        year_order_anomalies=index.year_anomalies,
        zero_keyword_papers=zero_kw,
        zero_author_papers=zero_auth,
        dropped_references=index.dropped_references,
    )
