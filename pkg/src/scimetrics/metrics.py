"""Per-paper metrics: novelty, developmental index, impact windows, productivity and team hierarchy."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import CitationIndex, Corpus, PaperRecord
from .embedding import EmbeddingTable

SHORT_WINDOW = (0, 10)
LONG_WINDOW_START = 21

CSV_COLUMNS = (
    "paper_id",
    "year",
    "field_id",
    "team_size",
    "l_ratio",
    "hierarchy_class",
    "novelty",
    "developmental",
    "impact_short",
    "impact_long",
    "lead_productivity",
    "support_productivity",
)


class UndefinedMetric(ValueError):
    """The metric is undefined for this input (distinct from a value of zero)."""


class HierarchyClass(str, Enum):
    FLAT = "flat"
    TALL = "tall"


@dataclass(frozen=True)
class MetricOptions:
    strict_subsequent: bool = False
    tie_policy: str = "tall"

    def __post_init__(self) -> None:
        if self.tie_policy not in ("tall", "flat"):
            raise ValueError("tie_policy must be 'tall' or 'flat'")


@dataclass(frozen=True)
class PaperMetrics:
    paper_id: str
    year: int
    field_id: str
    novelty: float | None = None
    developmental: float | None = None
    impact_short: int = 0
    impact_long: int = 0
    lead_productivity: float | None = None
    support_productivity: float | None = None
    l_ratio: float | None = None
    team_size: int | None = None
    hierarchy_class: HierarchyClass | None = None


# -- novelty -----------------------------------------------------------------


def novelty_with_drops(keywords: Iterable[str], table: EmbeddingTable) -> tuple[float, int]:
    """Novelty and the number of out-of-vocabulary keywords dropped."""
    kws = set(keywords)
    ids = sorted(table.vocab[k] for k in kws if k in table.vocab)
    n_oov = len(kws) - len(ids)
    m = len(ids)
    if m < 2:
        raise UndefinedMetric(f"novelty needs >= 2 in-vocabulary keywords, got {m}")
    dots = table.in_vectors[ids] @ table.out_vectors[ids].T
    off_diag = dots.sum() - np.trace(dots)
    return float(-off_diag / (m * (m - 1))), n_oov


def novelty(paper: PaperRecord, table: EmbeddingTable) -> float:
    """Mean of ``-(in_i . out_j)`` over ordered pairs of distinct in-vocabulary keywords."""
    return novelty_with_drops(paper.keywords, table)[0]


# -- developmental index -----------------------------------------------------


class TriadCounts(NamedTuple):
    n_f: int
    n_b: int
    n_r: int

    @property
    def value(self) -> float | None:
        denom = self.n_f + self.n_b + self.n_r
        return (self.n_b - self.n_f) / denom if denom else None


def triad_counts(focal: str, index: CitationIndex, strict: bool = False) -> TriadCounts:
    if focal not in index:
        raise KeyError(f"unknown paper {focal}")
    focal_year = index.years[focal]

    def citers(pid: str) -> set[str]:
        return {c for c, y in index.cited_by.get(pid, ()) if c != focal and (not strict or y > focal_year)}

    cite_focal = citers(focal)
    cite_refs: set[str] = set()
    for ref in index.references(focal):
        cite_refs |= citers(ref)
    both = cite_focal & cite_refs
    return TriadCounts(len(cite_focal) - len(both), len(both), len(cite_refs) - len(both))


def developmental_index(focal: str, index: CitationIndex, strict: bool = False) -> float | None:
    """``(n_b - n_f) / (n_f + n_b + n_r)``; None when nobody cites the focal paper or its references.

    With ``strict`` only citing papers published after the focal year count.
    """
    return triad_counts(focal, index, strict).value


# -- impact ------------------------------------------------------------------


def window_sums(counts: Sequence[int]) -> tuple[int, int]:
    """Short (offsets 0..10) and long (offset >= 21) sums of a per-year citation vector."""
    c = list(counts)
    lo, hi = SHORT_WINDOW
    return int(sum(c[lo : hi + 1])), int(sum(c[LONG_WINDOW_START:]))


def citation_offsets(focal: str, index: CitationIndex) -> tuple[list[int], int]:
    """Citations per year offset since publication, and the count of citations dated before it."""
    if focal not in index:
        raise KeyError(f"unknown paper {focal}")
    year = index.years[focal]
    offsets = Counter()
    anomalies = 0
    for _, y in index.cited_by.get(focal, ()):
        if y < year:
            anomalies += 1
        else:
            offsets[y - year] += 1
    counts = [0] * (max(offsets) + 1 if offsets else 0)
    for i, n in offsets.items():
        counts[i] = n
    return counts, anomalies


def impact_windows(focal: str, index: CitationIndex) -> tuple[int, int]:
    return window_sums(citation_offsets(focal, index)[0])


# -- productivity and teams --------------------------------------------------


def author_year_counts(corpus: Corpus) -> Counter:
    return Counter((a.author_id, corpus.papers[a.paper_id].year) for a in corpus.authorships)


def productivity(author: str, year: int, corpus: Corpus, counts: Mapping | None = None) -> int:
    """Number of the author's papers published in ``year`` (focal paper included)."""
    if not corpus.has_author(author):
        raise KeyError(f"unknown author {author}")
    if counts is not None:
        return int(counts.get((author, year), 0))
    return sum(1 for pid in corpus.papers_of(author) if corpus.papers[pid].year == year)


def classify(l_ratio: float, tie_policy: str = "tall") -> HierarchyClass:
    if l_ratio > 0.5 or (l_ratio == 0.5 and tie_policy == "flat"):
        return HierarchyClass.FLAT
    return HierarchyClass.TALL


@dataclass(frozen=True)
class TeamMetrics:
    l_ratio: float
    team_size: int
    lead_productivity: float
    support_productivity: float | None
    hierarchy_class: HierarchyClass


def team_metrics(focal: str, corpus: Corpus, counts: Mapping | None = None, tie_policy: str = "tall") -> TeamMetrics:
    team = corpus.team(focal)
    if not team:
        raise UndefinedMetric(f"paper {focal} has no authors")
    year = corpus.papers[focal].year
    counts = counts if counts is not None else author_year_counts(corpus)
    lead = [counts[(a.author_id, year)] for a in team if a.is_lead]
    support = [counts[(a.author_id, year)] for a in team if not a.is_lead]
    l_ratio = len(lead) / len(team)
    return TeamMetrics(
        l_ratio=l_ratio,
        team_size=len(team),
        lead_productivity=sum(lead) / len(lead),
        support_productivity=sum(support) / len(support) if support else None,
        hierarchy_class=classify(l_ratio, tie_policy),
    )


def hierarchy_trend(
    corpus: Corpus,
    funded_only: bool = False,
    bucket_years: int = 5,
    origin: int | None = None,
    tie_policy: str = "tall",
) -> list[tuple[int, float, int]]:
    """``(bucket start year, fraction Tall, papers in bucket)`` for non-empty buckets.

    Buckets are ``[origin + m*bucket_years, origin + (m+1)*bucket_years)``;
    ``origin`` defaults to the earliest corpus year. Zero-author papers are skipped.
    """
    if bucket_years < 1:
        raise ValueError("bucket_years must be >= 1")
    span = corpus.years()
    if span is None:
        return []
    origin = span[0] if origin is None else origin
    tall: Counter = Counter()
    total: Counter = Counter()
    for pid, paper in corpus.papers.items():
        if funded_only and not paper.is_funded:
            continue
        team = corpus.team(pid)
        if not team:
            continue
        bucket = origin + ((paper.year - origin) // bucket_years) * bucket_years
        l_ratio = sum(a.is_lead for a in team) / len(team)
        total[bucket] += 1
        tall[bucket] += classify(l_ratio, tie_policy) is HierarchyClass.TALL
    return [(b, tall[b] / total[b], total[b]) for b in sorted(total)]


# -- batch -------------------------------------------------------------------


@dataclass
class MetricsSummary:
    n_papers: int = 0
    novelty_undefined: int = 0
    oov_keywords_dropped: int = 0
    developmental_undefined: int = 0
    zero_reference_developmental: int = 0
    citation_year_anomalies: int = 0
    zero_author_papers: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def compute_metrics(
    corpus: Corpus,
    index: CitationIndex,
    table: EmbeddingTable | None,
    options: MetricOptions = MetricOptions(),
) -> tuple[dict[str, PaperMetrics], MetricsSummary]:
    counts = author_year_counts(corpus)
    out: dict[str, PaperMetrics] = {}
    summary = MetricsSummary(n_papers=len(corpus))
    for pid, paper in corpus.papers.items():
        nov = None
        if table is not None:
            try:
                nov, n_oov = novelty_with_drops(paper.keywords, table)
                summary.oov_keywords_dropped += n_oov
            except UndefinedMetric:
                summary.novelty_undefined += 1
                summary.oov_keywords_dropped += sum(1 for k in paper.keywords if k not in table.vocab)
        else:
            summary.novelty_undefined += 1
        dev = developmental_index(pid, index, options.strict_subsequent)
        if dev is None:
            summary.developmental_undefined += 1
        elif not index.references(pid):
            summary.zero_reference_developmental += 1
        c, anomalies = citation_offsets(pid, index)
        summary.citation_year_anomalies += anomalies
        short, long_ = window_sums(c)
        team_kw = {}
        if corpus.team(pid):
            tm = team_metrics(pid, corpus, counts, options.tie_policy)
            team_kw = dict(
                l_ratio=tm.l_ratio,
                team_size=tm.team_size,
                lead_productivity=tm.lead_productivity,
                support_productivity=tm.support_productivity,
                hierarchy_class=tm.hierarchy_class,
            )
        else:
            summary.zero_author_papers += 1
        out[pid] = PaperMetrics(
            paper_id=pid,
            year=paper.year,
            field_id=paper.field_id,
            novelty=nov,
            developmental=dev,
            impact_short=short,
            impact_long=long_,
            **team_kw,
        )
    return out, summary


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_metrics_csv(metrics: Mapping[str, PaperMetrics], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in metrics.values():
            w.writerow([_cell(getattr(m, c)) for c in CSV_COLUMNS])


def read_metrics_csv(path: str | Path) -> dict[str, PaperMetrics]:
    def opt(v, typ):
        return typ(v) if v != "" else None

    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["paper_id"]] = PaperMetrics(
                paper_id=row["paper_id"],
                year=int(row["year"]),
                field_id=row["field_id"],
                novelty=opt(row["novelty"], float),
                developmental=opt(row["developmental"], float),
                impact_short=int(row["impact_short"]),
                impact_long=int(row["impact_long"]),
                lead_productivity=opt(row["lead_productivity"], float),
                support_productivity=opt(row["support_productivity"], float),
                l_ratio=opt(row["l_ratio"], float),
                team_size=opt(row["team_size"], int),
                hierarchy_class=opt(row["hierarchy_class"], HierarchyClass),
            )
    return out


def write_trend_csv(series: Sequence[tuple[int, float, int]], path: str | Path, bucket_years: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("bucket_start", "bucket_end", "fraction_tall", "n_papers"))
        for start, frac, n in series:
            w.writerow((start, start + bucket_years - 1, repr(frac), n))
