"""Deterministic synthetic corpora and panels with planted ground truth.

Three generators share one seeding discipline (a single ``seed`` feeds one
``numpy.random.Generator``):

* :func:`generate_corpus` emits papers/authorships with clustered keywords,
  year-respecting preferential-attachment citations and a planted linear ramp
  in the fraction of tall (hierarchical) teams.
* :func:`generate_panel` emits author/field panel rows whose outcome follows a
  known linear model, together with the analytically derived share of
  variance that ``l_ratio`` adds over the controls.
* :func:`generate_contribution_population` emits contribution rows whose
  lead and support means are planted, for bootstrap calibration.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .contributions import INDICES, ContributionRow
from .corpus import AuthorshipRecord, Corpus, PaperRecord, Role, build_corpus, write_corpus
from .econometrics import REGRESSORS

TRUTH_SCHEMA_VERSION = 1


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_papers: int = 5000
    n_authors: int = 2000
    n_keywords: int = 200
    n_clusters: int = 20
    n_fields: int = 10
    year_min: int = 1950
    year_max: int = 2014
    growth: float = 0.03
    min_keywords: int = 3
    max_keywords: int = 6
    within_cluster_rate: float = 0.8
    popularity_exponent: float = 1.0
    mean_references: float = 8.0
    attachment_offset: float = 1.0
    max_team_size: int = 8
    career_span: tuple[int, int] = (5, 40)
    trend_start: float = 0.48
    trend_end: float = 0.75
    bucket_years: int = 5
    funded_fraction: float = 0.3
    mean_extra_grants: float = 1.0
    corresponding_lead_rate: float = 0.8

    def __post_init__(self) -> None:
        counts = ("n_authors", "n_keywords", "n_clusters", "n_fields", "min_keywords", "max_team_size", "bucket_years")
        for name in counts:
            if getattr(self, name) < 1:
                raise InfeasibleConfig(f"{name} must be positive")
        if self.n_papers < 0:
            raise InfeasibleConfig("n_papers must be non-negative")
        for name in ("within_cluster_rate", "trend_start", "trend_end", "funded_fraction", "corresponding_lead_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise InfeasibleConfig(f"{name} must lie in [0, 1]")
        if self.year_max < self.year_min:
            raise InfeasibleConfig("year_max < year_min")
        if self.max_keywords < self.min_keywords or self.max_keywords > self.n_keywords:
            raise InfeasibleConfig("keywords per paper must satisfy min <= max <= n_keywords")
        if self.max_team_size > self.n_authors:
            raise InfeasibleConfig(f"max_team_size {self.max_team_size} exceeds n_authors {self.n_authors}")
        if self.trend_end > 0 and self.max_team_size < 2:
            raise InfeasibleConfig("tall teams need max_team_size >= 2")
        if self.n_clusters > self.n_keywords:
            raise InfeasibleConfig("more clusters than keywords")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "career_span" in d:
            d["career_span"] = tuple(d["career_span"])
        return cls(**d)

    def planted_tall(self, year) -> np.ndarray:
        span = max(self.year_max - self.year_min, 1)
        return self.trend_start + (self.trend_end - self.trend_start) * (np.asarray(year) - self.year_min) / span


def _keyword_ids(n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"K{i:0{width}d}" for i in range(n)]


def _draw_keywords(rng, home: int, m: int, members: list[np.ndarray], weights: list[np.ndarray], cfg) -> list[int]:
    chosen: list[int] = []
    n_c = len(members)
    tries = 0
    while len(chosen) < m:
        tries += 1
        if tries > 1000:
            # home cluster exhausted under within_cluster_rate == 1
            kw = int(rng.integers(sum(len(x) for x in members)))
            if kw not in chosen:
                chosen.append(kw)
            continue
        c = home
        if n_c > 1 and rng.random() >= cfg.within_cluster_rate:
            c = int(rng.integers(n_c - 1))
            c += c >= home
        kw = int(members[c][np.searchsorted(weights[c], rng.random() * weights[c][-1])])
        if kw not in chosen:
            chosen.append(kw)
    return chosen


def generate_corpus(config: GeneratorConfig) -> tuple[Corpus, dict]:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    kw_names = _keyword_ids(cfg.n_keywords)
    kw_cluster = np.arange(cfg.n_keywords) % cfg.n_clusters
    members, cum_weights = [], []
    for c in range(cfg.n_clusters):
        idx = np.flatnonzero(kw_cluster == c)
        w = 1.0 / (np.arange(1, len(idx) + 1) ** cfg.popularity_exponent)
        members.append(idx)
        cum_weights.append(np.cumsum(w))

    truth = {
        "schema_version": TRUTH_SCHEMA_VERSION,
        "config": asdict(cfg),
        "keyword_clusters": {kw_names[i]: int(kw_cluster[i]) for i in range(cfg.n_keywords)} if cfg.n_papers else {},
        "trend": {"origin": cfg.year_min, "bucket_years": cfg.bucket_years, "buckets": []},
        "papers": {},
    }
    if cfg.n_papers == 0:
        return build_corpus([], []), truth

    years_range = np.arange(cfg.year_min, cfg.year_max + 1)
    year_w = np.exp(cfg.growth * (years_range - cfg.year_min))
    years = np.sort(rng.choice(years_range, size=cfg.n_papers, p=year_w / year_w.sum()))

    lo_span, hi_span = cfg.career_span
    a_start = rng.integers(cfg.year_min - lo_span, cfg.year_max + 1, size=cfg.n_authors)
    a_end = a_start + rng.integers(lo_span, hi_span + 1, size=cfg.n_authors)
    a_weight = rng.lognormal(0.0, 0.75, size=cfg.n_authors)
    a_width = len(str(cfg.n_authors - 1))
    a_names = [f"A{i:0{a_width}d}" for i in range(cfg.n_authors)]
    p_width = len(str(cfg.n_papers - 1))

    p_tall = cfg.planted_tall(years)
    papers: list[PaperRecord] = []
    authorships: list[AuthorshipRecord] = []
    cite_counts = np.zeros(cfg.n_papers)
    paper_truth = {}

    active_cache: dict[int, np.ndarray] = {}
    for y in np.unique(years):
        active = np.flatnonzero((a_start <= y) & (a_end >= y))
        active_cache[int(y)] = active if len(active) >= cfg.max_team_size else np.arange(cfg.n_authors)

    year_bounds = {int(y): np.searchsorted(years, y) for y in np.unique(years)}
    for y in np.unique(years):
        y = int(y)
        start = year_bounds[y]
        stop = int(np.searchsorted(years, y, side="right"))
        pool = start  # papers [0, start) were published in earlier years
        n_refs = rng.poisson(cfg.mean_references, size=stop - start)
        if pool == 0:
            n_refs[:] = 0
        cum = np.cumsum(cite_counts[:pool] + cfg.attachment_offset) if pool else None
        draws = np.searchsorted(cum, rng.random(int(n_refs.sum())) * cum[-1], side="right") if pool else np.zeros(0, int)
        splits = np.split(draws, np.cumsum(n_refs)[:-1]) if len(n_refs) else []
        new_cites = np.zeros(cfg.n_papers)
        active = active_cache[y]
        w_active = a_weight[active] / a_weight[active].sum()
        for off, i in enumerate(range(start, stop)):
            pid = f"P{i:0{p_width}d}"
            home = int(rng.integers(cfg.n_clusters))
            m = int(rng.integers(cfg.min_keywords, cfg.max_keywords + 1))
            kws = _draw_keywords(rng, home, m, members, cum_weights, cfg)
            refs = np.unique(splits[off]) if len(splits) else np.zeros(0, int)
            new_cites[refs] += 1
            funded = bool(rng.random() < cfg.funded_fraction)
            if funded:
                n_grants = 1 + int(rng.poisson(cfg.mean_extra_grants))
                amount = round(float(rng.lognormal(12.5, 0.6, size=n_grants).sum()), 2)
            else:
                n_grants, amount = 0, 0.0
            papers.append(
                PaperRecord(
                    paper_id=pid,
                    year=y,
                    field_id=f"F{home % cfg.n_fields}",
                    keywords=frozenset(kw_names[k] for k in kws),
                    references=frozenset(f"P{r:0{p_width}d}" for r in refs.tolist()),
                    is_funded=funded,
                    grant_count=n_grants,
                    grant_amount=amount,
                )
            )
            tall = bool(rng.random() < p_tall[i])
            if tall:
                size = int(rng.integers(2, cfg.max_team_size + 1))
                n_lead = int(rng.integers(1, size // 2 + 1))
            else:
                size = int(rng.integers(1, cfg.max_team_size + 1))
                n_lead = int(rng.integers(size // 2 + 1, size + 1))
            team = rng.choice(active, size=size, replace=False, p=w_active)
            is_lead = np.zeros(size, dtype=bool)
            is_lead[rng.choice(size, size=n_lead, replace=False)] = True
            pool_corr = np.flatnonzero(is_lead) if rng.random() < cfg.corresponding_lead_rate else np.arange(size)
            corr = int(rng.choice(pool_corr))
            order = rng.permutation(size)
            for pos, j in enumerate(order, start=1):
                authorships.append(
                    AuthorshipRecord(
                        paper_id=pid,
                        author_id=a_names[int(team[j])],
                        position=pos,
                        is_corresponding=bool(j == corr),
                        role=Role.LEAD if is_lead[j] else Role.SUPPORT,
                    )
                )
            paper_truth[pid] = {"home_cluster": home, "p_tall": float(p_tall[i]), "planted_tall": tall}
        cite_counts += new_cites

    buckets = {}
    for i, y in enumerate(years.tolist()):
        b = cfg.year_min + ((y - cfg.year_min) // cfg.bucket_years) * cfg.bucket_years
        s = buckets.setdefault(b, [0.0, 0])
        s[0] += float(p_tall[i])
        s[1] += 1
    truth["trend"]["buckets"] = [
        {"start": b, "expected_tall_fraction": s / n, "n_papers": n} for b, (s, n) in sorted(buckets.items())
    ]
    truth["papers"] = paper_truth
    return build_corpus(papers, authorships), truth


def generate(config: GeneratorConfig, out_dir: str | Path) -> tuple[Path, Path, Path]:
    """Write ``papers.jsonl``, ``authorships.jsonl`` and ``truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, truth = generate_corpus(config)
    paths = out / "papers.jsonl", out / "authorships.jsonl", out / "truth.json"
    write_corpus(corpus, paths[0], paths[1])
    with open(paths[2], "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return paths


# -- planted regression panel ------------------------------------------------

_GAUSSIAN_BLOCK = REGRESSORS[:5]
_FUNDING_BLOCK = REGRESSORS[5:]


def _default_mixing() -> list[list[float]]:
    # lower-triangular: l_ratio is correlated with team size and career ages
    return [
        [0.25, 0.0, 0.0, 0.0, 0.0],
        [-0.6, 1.5, 0.0, 0.0, 0.0],
        [0.4, 0.5, 2.0, 0.0, 0.0],
        [0.2, 0.3, 0.6, 1.0, 0.0],
        [0.5, 0.8, 2.5, 1.0, 1.5],
    ]


@dataclass(frozen=True)
class PanelConfig:
    seed: int = 0
    n_rows: int = 10_000
    n_authors: int = 1000
    n_fields: int = 20
    beta: dict = field(
        default_factory=lambda: {
            "l_ratio": 2.0,
            "team_size": 0.15,
            "career_age_mean": 0.1,
            "career_age_std": -0.1,
            "career_age_max": 0.05,
            "is_funded": 0.3,
            "grant_count": 0.05,
            "grant_amount": 0.2,
        }
    )
    mixing: list = field(default_factory=_default_mixing)
    snr: float = 1.0
    funded_fraction: float = 0.4
    extra_grants: float = 1.5
    grant_unit: tuple[float, float] = (0.1, 0.5)
    fe_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.n_rows < 2 or self.n_authors < 1 or self.n_fields < 1:
            raise InfeasibleConfig("panel needs >= 2 rows and >= 1 author/field")
        if self.n_rows < 2 * self.n_authors:
            raise InfeasibleConfig("each author needs at least two rows")
        if self.snr <= 0:
            raise InfeasibleConfig("snr must be positive")
        if not 0 < self.funded_fraction < 1:
            raise InfeasibleConfig("funded_fraction must lie in (0, 1)")
        if set(self.beta) != set(REGRESSORS):
            raise InfeasibleConfig(f"beta must name exactly {REGRESSORS}")

    def beta_vector(self) -> np.ndarray:
        return np.array([self.beta[k] for k in REGRESSORS], dtype=np.float64)

    def covariance(self) -> np.ndarray:
        """Population covariance of the idiosyncratic (within-author) part of the regressors."""
        A = np.asarray(self.mixing, dtype=np.float64)
        cov = np.zeros((8, 8))
        cov[:5, :5] = A @ A.T
        p, lam = self.funded_fraction, self.extra_grants
        a, b = self.grant_unit
        eu, eu2 = (a + b) / 2, (a * a + a * b + b * b) / 3
        eg, eg2 = p * (1 + lam), p * (1 + 3 * lam + lam * lam)
        var_g = eg2 - eg * eg
        cov_fg = p * (1 + lam) * (1 - p)
        f = np.array(
            [
                [p * (1 - p), cov_fg, cov_fg * eu],
                [cov_fg, var_g, var_g * eu],
                [cov_fg * eu, var_g * eu, eg2 * eu2 - (eg * eu) ** 2],
            ]
        )
        cov[5:, 5:] = f
        return cov

    def truth(self) -> dict:
        cov = self.covariance()
        beta = self.beta_vector()
        explained_full = float(beta @ cov @ beta)
        c = np.arange(1, 8)
        resid_l = float(cov[0, 0] - cov[0, c] @ np.linalg.solve(cov[np.ix_(c, c)], cov[c, 0]))
        gain = beta[0] ** 2 * resid_l
        explained_restricted = explained_full - gain
        noise_var = explained_full / self.snr
        return {
            "beta": dict(self.beta),
            "noise_variance": noise_var,
            "signal_variance": explained_full,
            "r2_full": explained_full / (explained_full + noise_var),
            "r2_restricted": explained_restricted / (explained_full + noise_var),
            "additional_variance_pct": 100.0 * gain / explained_restricted,
        }


@dataclass
class Panel:
    y: np.ndarray
    X: np.ndarray
    authors: np.ndarray
    fields: np.ndarray
    expected: np.ndarray
    truth: dict

    @property
    def groups(self) -> list[np.ndarray]:
        return [self.authors, self.fields]


def generate_panel(config: PanelConfig) -> Panel:
    """Rows ``y = X beta + author effect + field effect + noise``.

    Regressors carry author-level shifts (so omitting fixed effects biases
    estimates); the funding block is drawn independently of the rest.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_rows
    authors = np.arange(n) % cfg.n_authors
    fields = rng.integers(cfg.n_fields, size=n)
    A = np.asarray(cfg.mixing, dtype=np.float64)
    author_shift = rng.normal(size=(cfg.n_authors, 5)) * np.array([0.1, 1.0, 3.0, 1.0, 4.0])
    base = np.array([0.5, 4.0, 10.0, 4.0, 18.0])
    gauss = base + author_shift[authors] + rng.normal(size=(n, 5)) @ A.T
    funded = (rng.random(n) < cfg.funded_fraction).astype(np.float64)
    grants = funded * (1 + rng.poisson(cfg.extra_grants, size=n))
    amount = grants * rng.uniform(*cfg.grant_unit, size=n)
    X = np.column_stack([gauss, funded, grants, amount])
    truth = cfg.truth()
    beta = cfg.beta_vector()
    author_fe = rng.normal(scale=cfg.fe_scale, size=cfg.n_authors)
    field_fe = rng.normal(scale=cfg.fe_scale, size=cfg.n_fields)
    expected = X @ beta + author_fe[authors] + field_fe[fields]
    y = expected + rng.normal(scale=math.sqrt(truth["noise_variance"]), size=n)
    return Panel(y, X, authors, fields, expected, truth)


# -- planted contribution population -----------------------------------------


@dataclass(frozen=True)
class PopulationConfig:
    seed: int = 0
    n_papers: int = 400
    max_team_size: int = 6
    concentration: float = 6.0
    lead_means: tuple = (0.6, 0.3, 0.7, 0.55, 0.5, 0.5, 0.45, 0.65)
    support_means: tuple = (0.4, 0.45, 0.2, 0.3, 0.5, 0.35, 0.5, 0.4)

    def team_moments(self) -> tuple[float, float]:
        """Expected (lead count, team size) under uniform size and uniform lead count."""
        sizes = np.arange(1, self.max_team_size + 1)
        return float(((sizes + 1) / 2).mean()), float(sizes.mean())

    def truth(self) -> dict:
        e_lead, e_size = self.team_moments()
        share = e_lead / e_size
        out = {}
        for k, ml, ms in zip(INDICES, self.lead_means, self.support_means):
            pop = share * ml + (1 - share) * ms
            out[k] = {"pop": pop, "rel_lead": (ml - pop) / abs(pop), "rel_support": (ms - pop) / abs(pop)}
        return out


def generate_contribution_population(config: PopulationConfig) -> tuple[list[ContributionRow], dict]:
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    kappa = cfg.concentration
    rows = []
    for p in range(cfg.n_papers):
        size = int(rng.integers(1, cfg.max_team_size + 1))
        n_lead = int(rng.integers(1, size + 1))
        for a in range(size):
            lead = a < n_lead
            means = np.asarray(cfg.lead_means if lead else cfg.support_means)
            vals = rng.beta(means * kappa, (1 - means) * kappa)
            rows.append(
                ContributionRow(
                    f"P{p}", f"A{p}-{a}", Role.LEAD if lead else Role.SUPPORT, *map(float, vals)
                )
            )
    return rows, cfg.truth()
