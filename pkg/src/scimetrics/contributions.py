"""Imputed author contributions and lead/support group distances with cluster-bootstrap intervals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CitationIndex, Corpus, Role, build_citation_index

INDICES = (
    "ref_contrib",
    "topic_contrib",
    "first_author_prob",
    "corresponding_prob",
    "career_age",
    "citation_stock",
    "topic_diversity",
    "publication_stock",
)
TEAM_SCALED = ("ref_contrib", "topic_contrib")
POPULATION_SCALED = ("career_age", "citation_stock", "topic_diversity", "publication_stock")


@dataclass(frozen=True)
class ContributionOptions:
    overlap: str = "intersection"
    prior: str = "strict"
    team_scaling: bool = True
    population_scaling: bool = True

    def __post_init__(self) -> None:
        if self.overlap not in ("intersection", "jaccard"):
            raise ValueError("overlap must be 'intersection' or 'jaccard'")
        if self.prior not in ("strict", "same_year"):
            raise ValueError("prior must be 'strict' or 'same_year'")


@dataclass(frozen=True)
class AuthorPriorProfile:
    author_id: str
    as_of_paper: str
    prior_references: frozenset[str]
    prior_keywords: frozenset[str]
    first_pub_year: int
    prior_citations: int
    prior_publication_count: int
    prior_first_author_count: int
    prior_corresponding_count: int


@dataclass(frozen=True)
class ContributionRow:
    paper_id: str
    author_id: str
    role: Role
    ref_contrib: float
    topic_contrib: float
    first_author_prob: float
    corresponding_prob: float
    career_age: float
    citation_stock: float
    topic_diversity: float
    publication_stock: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in INDICES)


def _is_prior(year: int, focal_year: int, pid: str, focal: str, policy: str) -> bool:
    if pid == focal:
        return False
    return year < focal_year if policy == "strict" else year <= focal_year


def build_prior_profile(
    author: str,
    focal: str,
    corpus: Corpus,
    index: CitationIndex | None = None,
    prior: str = "strict",
) -> AuthorPriorProfile:
    """Summarise the author's papers published before the focal paper.

    Citations are counted only from citing papers that also precede the focal
    year, so nothing at or after the focal year can leak into the profile.
    """
    team = corpus.team(focal)
    if not any(a.author_id == author for a in team):
        raise KeyError(f"author {author} is not on paper {focal}")
    index = index if index is not None else build_citation_index(corpus)
    focal_year = corpus.papers[focal].year
    refs: set[str] = set()
    kws: set[str] = set()
    first_year = focal_year
    n_pub = n_first = n_corr = n_cit = 0
    for pid in corpus.papers_of(author):
        paper = corpus.papers[pid]
        if not _is_prior(paper.year, focal_year, pid, focal, prior):
            continue
        n_pub += 1
        refs |= paper.references
        kws |= paper.keywords
        first_year = min(first_year, paper.year)
        me = next(a for a in corpus.team(pid) if a.author_id == author)
        n_first += me.position == 1
        n_corr += me.is_corresponding
        n_cit += sum(1 for c, y in index.cited_by.get(pid, ()) if _is_prior(y, focal_year, c, focal, prior))
    return AuthorPriorProfile(
        author_id=author,
        as_of_paper=focal,
        prior_references=frozenset(refs),
        prior_keywords=frozenset(kws),
        first_pub_year=first_year,
        prior_citations=n_cit,
        prior_publication_count=n_pub,
        prior_first_author_count=n_first,
        prior_corresponding_count=n_corr,
    )


def minmax(values: Sequence[float]) -> list[float]:
    """Min-max scale to [0, 1]; a degenerate range maps everything to 0."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [min(1.0, max(0.0, (v - lo) / (hi - lo))) for v in values]


def _overlap(a: frozenset, b: frozenset, kind: str) -> float:
    inter = len(a & b)
    if kind == "intersection":
        return float(inter)
    union = len(a | b)
    return inter / union if union else 0.0


def contribution_indices(
    focal: str,
    corpus: Corpus,
    index: CitationIndex | None = None,
    options: ContributionOptions = ContributionOptions(),
) -> list[ContributionRow]:
    """The eight indices for every author of ``focal``.

    Reference and topic overlap are min-max scaled within the team. The four
    experience variables stay raw here; :func:`scale_population` scales them.
    """
    team = corpus.team(focal)
    if not team:
        raise ValueError(f"paper {focal} has no authors")
    index = index if index is not None else build_citation_index(corpus)
    paper = corpus.papers[focal]
    raw = []
    for a in team:
        prof = build_prior_profile(a.author_id, focal, corpus, index, options.prior)
        n = prof.prior_publication_count
        raw.append(
            dict(
                paper_id=focal,
                author_id=a.author_id,
                role=a.role,
                ref_contrib=_overlap(paper.references, prof.prior_references, options.overlap),
                topic_contrib=_overlap(paper.keywords, prof.prior_keywords, options.overlap),
                first_author_prob=prof.prior_first_author_count / n if n else 0.0,
                corresponding_prob=prof.prior_corresponding_count / n if n else 0.0,
                career_age=float(paper.year - prof.first_pub_year),
                citation_stock=float(prof.prior_citations),
                topic_diversity=float(len(prof.prior_keywords)),
                publication_stock=float(n),
            )
        )
    if options.team_scaling:
        for key in TEAM_SCALED:
            for r, v in zip(raw, minmax([r[key] for r in raw])):
                r[key] = v
    return [ContributionRow(**r) for r in raw]


def scale_population(rows: Sequence[ContributionRow], keys: Iterable[str] = POPULATION_SCALED) -> list[ContributionRow]:
    rows = list(rows)
    updates: list[dict] = [{} for _ in rows]
    for key in keys:
        for u, v in zip(updates, minmax([getattr(r, key) for r in rows])):
            u[key] = v
    return [replace(r, **u) for r, u in zip(rows, updates)]


def all_contributions(
    corpus: Corpus,
    index: CitationIndex | None = None,
    options: ContributionOptions = ContributionOptions(),
) -> list[ContributionRow]:
    index = index if index is not None else build_citation_index(corpus)
    rows: list[ContributionRow] = []
    for pid in corpus.papers:
        if corpus.team(pid):
            rows.extend(contribution_indices(pid, corpus, index, options))
    return scale_population(rows) if options.population_scaling else rows


# -- group distances ---------------------------------------------------------


@dataclass
class IndexDistance:
    pop: float
    lead: float
    support: float | None
    rel_lead: float | None
    rel_support: float | None
    ci_lead: tuple[float, float] | None
    ci_support: tuple[float, float] | None
    pop_zero: bool = False

    def to_json(self) -> dict:
        return {
            "pop": self.pop,
            "lead": self.lead,
            "support": self.support,
            "rel_lead": self.rel_lead,
            "rel_support": self.rel_support,
            "ci_lead": list(self.ci_lead) if self.ci_lead else None,
            "ci_support": list(self.ci_support) if self.ci_support else None,
            "pop_zero": self.pop_zero,
        }


@dataclass
class GroupDistanceReport:
    indices: dict[str, IndexDistance]
    B: int
    level: float
    seed: int
    n_rows: int
    n_papers: int
    extra: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> IndexDistance:
        return self.indices[key]

    def to_json(self) -> dict:
        out = {}
        for k, d in self.indices.items():
            out[k] = {**d.to_json(), "B": self.B, "level": self.level, "seed": self.seed}
        return out


def relative_distance(group_mean, pop_mean):
    """``(group - pop) / |pop|``, NaN where ``pop`` is zero. Works elementwise on arrays."""
    g = np.asarray(group_mean, dtype=np.float64)
    p = np.asarray(pop_mean, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p != 0, (g - p) / np.abs(p), np.nan)


def _paper_sums(rows: Sequence[ContributionRow], keys: Sequence[str]):
    papers: dict[str, int] = {}
    for r in rows:
        papers.setdefault(r.paper_id, len(papers))
    P, K = len(papers), len(keys)
    s_lead, s_sup = np.zeros((P, K)), np.zeros((P, K))
    n_lead, n_sup = np.zeros(P), np.zeros(P)
    for r in rows:
        p = papers[r.paper_id]
        vals = [getattr(r, k) for k in keys]
        if r.role is Role.LEAD:
            s_lead[p] += vals
            n_lead[p] += 1
        else:
            s_sup[p] += vals
            n_sup[p] += 1
    return s_lead, n_lead, s_sup, n_sup


def _interval(samples: np.ndarray, point: float, level: float) -> tuple[float, float] | None:
    ok = samples[np.isfinite(samples)]
    if not ok.size:
        return None
    lo, hi = np.quantile(ok, [(1 - level) / 2, (1 + level) / 2])
    # percentile intervals need not contain the point estimate; widen to keep it inside
    return float(min(lo, point)), float(max(hi, point))


def group_distance_report(
    rows: Sequence[ContributionRow],
    B: int = 2000,
    level: float = 0.95,
    seed: int = 0,
    keys: Sequence[str] = INDICES,
) -> GroupDistanceReport:
    """Population, lead and support means per index, relative distances and bootstrap CIs.

    The bootstrap resamples whole papers with replacement; a replicate where a
    group is empty or the population mean is zero contributes no draw.
    """
    if not rows:
        raise ValueError("no contribution rows")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if B < 1:
        raise ValueError("B must be >= 1")
    keys = list(keys)
    s_lead, n_lead, s_sup, n_sup = _paper_sums(rows, keys)
    if n_lead.sum() == 0:
        raise ValueError("no lead-author rows")
    P = len(n_lead)

    def stats_for(w: np.ndarray):
        # w: (..., P) paper weights
        nl, ns = w @ n_lead, w @ n_sup
        sl, ss = w @ s_lead, w @ s_sup
        with np.errstate(divide="ignore", invalid="ignore"):
            pop = (sl + ss) / (nl + ns)[..., None]
            lead = sl / nl[..., None]
            sup = ss / ns[..., None]
        return pop, lead, sup

    pop, lead, sup = stats_for(np.ones(P))
    rng = np.random.default_rng(seed)
    W = rng.multinomial(P, np.full(P, 1.0 / P), size=B).astype(np.float64)
    bpop, blead, bsup = stats_for(W)
    rel_l_b = relative_distance(blead, bpop)
    rel_s_b = relative_distance(bsup, bpop)
    has_sup = n_sup.sum() > 0

    out = {}
    for j, key in enumerate(keys):
        rl = float(relative_distance(lead[j], pop[j]))
        rs = float(relative_distance(sup[j], pop[j])) if has_sup else math.nan
        out[key] = IndexDistance(
            pop=float(pop[j]),
            lead=float(lead[j]),
            support=float(sup[j]) if has_sup else None,
            rel_lead=rl if math.isfinite(rl) else None,
            rel_support=rs if math.isfinite(rs) else None,
            ci_lead=_interval(rel_l_b[:, j], rl, level) if math.isfinite(rl) else None,
            ci_support=_interval(rel_s_b[:, j], rs, level) if math.isfinite(rs) else None,
            pop_zero=bool(pop[j] == 0),
        )
    return GroupDistanceReport(out, B, level, seed, len(rows), P)


# -- I/O ---------------------------------------------------------------------


def write_contributions_csv(rows: Sequence[ContributionRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("paper_id", "author_id", "role") + INDICES)
        for r in rows:
            w.writerow([r.paper_id, r.author_id, r.role.value] + [repr(float(v)) for v in r.values()])


def read_contributions_csv(path: str | Path) -> list[ContributionRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            ContributionRow(
                paper_id=row["paper_id"],
                author_id=row["author_id"],
                role=Role(row["role"]),
                **{k: float(row[k]) for k in INDICES},
            )
            for row in csv.DictReader(fh)
        ]

