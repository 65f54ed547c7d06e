"""Author/field fixed-effect regressions and correlation utilities."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, sparse, stats
from scipy.sparse.csgraph import connected_components

from .corpus import Corpus

logger = logging.getLogger(__name__)

REGRESSORS = (
    "l_ratio",
    "team_size",
    "career_age_mean",
    "career_age_std",
    "career_age_max",
    "is_funded",
    "grant_count",
    "grant_amount",
)
CONTROLS = REGRESSORS[1:]
DEPENDENTS = (
    "novelty",
    "developmental",
    "lead_productivity",
    "support_productivity",
    "impact_short",
    "impact_long",
)
LOG_DEPENDENTS = frozenset({"lead_productivity", "support_productivity", "impact_short", "impact_long"})
GRANT_SCALE = 1e6


class EstimationError(RuntimeError):
    pass


class ConvergenceError(EstimationError):
    pass


# -- correlation -------------------------------------------------------------


@dataclass(frozen=True)
class PearsonResult:
    r: float
    p_value: float
    n: int


def pearson(x, y) -> PearsonResult:
    """Sample Pearson r with a two-sided p-value from the t(n-2) distribution."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    n = len(x)
    if n < 3:
        raise ValueError("pearson needs at least 3 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("pearson is undefined for a constant vector")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return PearsonResult(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return PearsonResult(r, p, n)


# -- panel construction ------------------------------------------------------


@dataclass(frozen=True)
class PanelRow:
    obs_id: str
    author_id: str
    field_id: str
    dependent: float
    l_ratio: float
    team_size: float
    career_age_mean: float
    career_age_std: float
    career_age_max: float
    is_funded: float
    grant_count: float
    grant_amount: float


@dataclass(frozen=True)
class EconConfig:
    tol: float = 1e-8
    max_iter: int = 1000
    se_type: str = "HC1"
    transform: str = "log1p"
    min_papers: int = 2
    career_age_std: str = "population"

    def __post_init__(self) -> None:
        if self.se_type not in ("HC1", "cluster"):
            raise ValueError(f"se_type must be 'HC1' or 'cluster', got {self.se_type!r}")
        if self.transform not in ("log1p", "raw"):
            raise ValueError(f"transform must be 'log1p' or 'raw', got {self.transform!r}")
        if self.career_age_std not in ("population", "sample"):
            raise ValueError("career_age_std must be 'population' or 'sample'")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")


def career_age_summary(ages: Sequence[float], convention: str = "population") -> tuple[float, float, float]:
    a = np.asarray(ages, dtype=np.float64)
    ddof = 0 if convention == "population" or len(a) < 2 else 1
    return float(a.mean()), float(a.std(ddof=ddof)), float(a.max())


def first_publication_years(corpus: Corpus) -> dict[str, int]:
    first: dict[str, int] = {}
    for a in corpus.authorships:
        y = corpus.papers[a.paper_id].year
        if y < first.get(a.author_id, y + 1):
            first[a.author_id] = y
    return first


def build_panel(
    corpus: Corpus,
    metrics: Mapping[str, object],
    dependent: str,
    config: EconConfig = EconConfig(),
    first_years: Mapping[str, int] | None = None,
) -> tuple[list[PanelRow], int]:
    """One row per (author, paper) for authors with at least ``min_papers`` papers.

    ``metrics`` maps paper_id to an object exposing the dependent and
    ``l_ratio``/``team_size`` attributes. Returns the rows and the number of
    rows dropped because the dependent was undefined.
    """
    if dependent not in DEPENDENTS:
        raise ValueError(f"unknown dependent {dependent!r}; expected one of {DEPENDENTS}")
    first = first_years if first_years is not None else first_publication_years(corpus)
    eligible = {aid for aid in corpus.author_ids if len(corpus.papers_of(aid)) >= config.min_papers}
    use_log = config.transform == "log1p" and dependent in LOG_DEPENDENTS
    rows: list[PanelRow] = []
    dropped = 0
    for pid, paper in corpus.papers.items():
        team = corpus.team(pid)
        if not team or not any(a.author_id in eligible for a in team):
            continue
        m = metrics.get(pid)
        value = getattr(m, dependent, None) if m is not None else None
        ages = [paper.year - first[a.author_id] for a in team]
        age_mean, age_std, age_max = career_age_summary(ages, config.career_age_std)
        for a in team:
            if a.author_id not in eligible:
                continue
            if value is None:
                dropped += 1
                continue
            y = math.log1p(value) if use_log else float(value)
            rows.append(
                PanelRow(
                    obs_id=f"{a.author_id}|{pid}",
                    author_id=a.author_id,
                    field_id=paper.field_id,
                    dependent=y,
                    l_ratio=float(m.l_ratio),
                    team_size=float(m.team_size),
                    career_age_mean=age_mean,
                    career_age_std=age_std,
                    career_age_max=age_max,
                    is_funded=float(paper.is_funded),
                    grant_count=float(paper.grant_count),
                    grant_amount=paper.grant_amount / GRANT_SCALE,
                )
            )
    return rows, dropped


def panel_arrays(rows: Sequence[PanelRow]) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Dependent vector, regressor matrix (columns in REGRESSORS order) and integer-coded FE groups."""
    y = np.fromiter((r.dependent for r in rows), dtype=np.float64, count=len(rows))
    X = np.array([[getattr(r, c) for c in REGRESSORS] for r in rows], dtype=np.float64).reshape(len(rows), len(REGRESSORS))
    groups = [
        np.unique([r.author_id for r in rows], return_inverse=True)[1].astype(np.int64),
        np.unique([r.field_id for r in rows], return_inverse=True)[1].astype(np.int64),
    ]
    return y, X, groups


# -- within transformation ---------------------------------------------------


@dataclass
class WithinResult:
    data: np.ndarray
    keep: np.ndarray
    n_dropped: int
    iterations: int
    max_change: float
    groups: list[np.ndarray]


def drop_singletons(groups: Sequence[np.ndarray]) -> np.ndarray:
    """Keep-mask after iteratively removing rows whose group in any factor has one member."""
    n = len(groups[0]) if groups else 0
    keep = np.ones(n, dtype=bool)
    while True:
        bad = np.zeros(n, dtype=bool)
        for g in groups:
            sizes = np.bincount(g[keep], minlength=g.max() + 1 if n else 0)
            bad |= keep & (sizes[g] == 1)
        if not bad.any():
            return keep
        keep &= ~bad


def _recode(g: np.ndarray) -> np.ndarray:
    return np.unique(g, return_inverse=True)[1].astype(np.int64)


def _demean_once(a: np.ndarray, g: np.ndarray, n_groups: int, sizes: np.ndarray) -> None:
    for j in range(a.shape[1]):
        means = np.bincount(g, weights=a[:, j], minlength=n_groups) / sizes
        a[:, j] -= means[g]


def within_transform(
    data: np.ndarray,
    groups: Sequence[np.ndarray],
    tol: float = 1e-8,
    max_iter: int = 1000,
    drop_singleton_groups: bool = True,
) -> WithinResult:
    """Sweep out the group means of each factor in turn until a sweep moves no cell more than ``tol``."""
    data = np.asarray(data, dtype=np.float64)
    squeeze = data.ndim == 1
    a = data.reshape(len(data), -1).copy()
    if len(a) < 2:
        raise EstimationError("within transform needs at least 2 rows")
    groups = [_recode(np.asarray(g)) for g in groups]
    keep = drop_singletons(groups) if drop_singleton_groups else np.ones(len(a), dtype=bool)
    a = a[keep]
    coded = [_recode(g[keep]) for g in groups]
    meta = [(g, int(g.max()) + 1, np.bincount(g).astype(np.float64)) for g in coded if len(g)]
    change = 0.0
    it = 0
    if len(a):
        for it in range(1, max_iter + 1):
            before = a.copy()
            for g, ng, sizes in meta:
                _demean_once(a, g, ng, sizes)
            change = float(np.max(np.abs(a - before))) if a.size else 0.0
            if change < tol or len(meta) == 1:
                break
        else:
            raise ConvergenceError(f"within transform did not converge in {max_iter} sweeps (last change {change:.3g})")
    out = a[:, 0] if squeeze else a
    return WithinResult(out, keep, int((~keep).sum()), it, change, coded)


def absorbed_dof(groups: Sequence[np.ndarray]) -> int:
    """Rank of the fixed-effect dummy block."""
    groups = [g for g in groups if len(g)]
    if not groups:
        return 0
    if len(groups) == 1:
        return int(len(np.unique(groups[0])))
    if len(groups) > 2:
        raise EstimationError("at most two fixed-effect factors are supported")
    g1, g2 = groups
    n1, n2 = int(g1.max()) + 1, int(g2.max()) + 1
    adj = sparse.coo_matrix((np.ones(len(g1)), (g1, g2 + n1)), shape=(n1 + n2, n1 + n2))
    n_comp, _ = connected_components(adj, directed=False)
    return n1 + n2 - n_comp


# -- OLS ---------------------------------------------------------------------


@dataclass
class OlsFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    n: int
    df_resid: int
    dropped_columns: list[str]
    resid: np.ndarray = field(repr=False)

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def conf_int(self, name: str, level: float = 0.95) -> tuple[float, float]:
        i = self.names.index(name)
        q = stats.t.ppf(0.5 + level / 2, self.df_resid)
        return float(self.coef[i] - q * self.se[i]), float(self.coef[i] + q * self.se[i])


def ols_robust(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str] | None = None,
    se_type: str = "HC1",
    clusters: np.ndarray | None = None,
    df_absorbed: int = 0,
    rank_tol: float = 1e-10,
) -> OlsFit:
    """Least squares by column-pivoted QR with heteroskedasticity-robust standard errors.

    R² uses the uncentered total sum of squares, which is the within R² when
    ``X`` and ``y`` have been demeaned. HC1 scales by ``n / (n - p - df_absorbed)``
    so absorbed fixed effects count against the residual degrees of freedom.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{i}" for i in range(p)]
    if n <= p:
        raise EstimationError(f"need more rows than columns (n={n}, p={p})")
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        raise EstimationError("design matrix has rank 0")
    rank = int((diag > rank_tol * diag[0]).sum())
    kept = np.sort(piv[:rank])
    dropped = [names[i] for i in range(p) if i not in set(kept.tolist())]
    if dropped:
        logger.warning("dropping collinear column(s): %s", ", ".join(dropped))
    Xk = X[:, kept]
    Q, R = linalg.qr(Xk, mode="economic")
    coef = linalg.solve_triangular(R, Q.T @ y)
    resid = y - Xk @ coef
    k = len(kept)
    R_inv = linalg.solve_triangular(R, np.eye(k))
    bread = R_inv @ R_inv.T
    if se_type == "HC1":
        df = n - k - df_absorbed
        if df <= 0:
            raise EstimationError("no residual degrees of freedom")
        Xe = Xk * resid[:, None]
        meat = Xe.T @ Xe
        vcov = bread @ meat @ bread * (n / df)
    elif se_type == "cluster":
        if clusters is None:
            raise EstimationError("cluster standard errors need cluster labels")
        codes = _recode(np.asarray(clusters))
        G = int(codes.max()) + 1
        scores = np.zeros((G, k))
        np.add.at(scores, codes, Xk * resid[:, None])
        meat = scores.T @ scores
        vcov = bread @ meat @ bread * (G / (G - 1)) * ((n - 1) / (n - k))
        df = G - 1
    else:
        raise ValueError(f"unknown se_type {se_type!r}")
    se = np.sqrt(np.maximum(np.diag(vcov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf))
    pv = 2.0 * stats.t.sf(np.abs(t), df)
    tss = float(y @ y)
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 0.0
    return OlsFit([names[i] for i in kept], coef, se, t, pv, r2, n, int(df), dropped, resid)


def additional_variance(r2_full: float, r2_restricted: float, n_full: int | None = None, n_restricted: int | None = None):
    """Percentage gain in R² from the added regressor; None when the restricted R² is zero."""
    if n_full is not None and n_restricted is not None and n_full != n_restricted:
        raise EstimationError(f"sample mismatch: {n_full} vs {n_restricted} rows")
    if r2_restricted == 0:
        return None
    return 100.0 * (r2_full - r2_restricted) / r2_restricted


# -- end-to-end fixed-effect fit ---------------------------------------------


@dataclass
class RegressionResult:
    dependent: str
    names: list[str]
    coef: list[float]
    se: list[float]
    t: list[float]
    p: list[float]
    r2_full: float
    r2_restricted: float
    additional_variance_pct: float | None
    n_obs: int
    n_dropped_singletons: int
    n_dropped_undefined: int
    iterations: int
    df_resid: int
    dropped_columns: list[str]
    ci_low: list[float]
    ci_high: list[float]

    def coefficient(self, name: str) -> float:
        return self.coef[self.names.index(name)]

    def interval(self, name: str) -> tuple[float, float]:
        i = self.names.index(name)
        return self.ci_low[i], self.ci_high[i]

    def to_json(self) -> dict:
        return {
            "dependent": self.dependent,
            "coefficients": {
                n: {"coef": c, "se": s, "t": t, "p": p, "ci95": [lo, hi]}
                for n, c, s, t, p, lo, hi in zip(self.names, self.coef, self.se, self.t, self.p, self.ci_low, self.ci_high)
            },
            "r2_full": self.r2_full,
            "r2_restricted": self.r2_restricted,
            "additional_variance_pct": self.additional_variance_pct,
            "n_obs": self.n_obs,
            "n_dropped_singletons": self.n_dropped_singletons,
            "n_dropped_undefined": self.n_dropped_undefined,
            "fe_iterations": self.iterations,
            "df_resid": self.df_resid,
            "dropped_columns": self.dropped_columns,
        }


def _finite(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def fit_arrays(
    y: np.ndarray,
    X: np.ndarray,
    groups: Sequence[np.ndarray],
    names: Sequence[str] = REGRESSORS,
    dependent: str = "y",
    focus: str = "l_ratio",
    config: EconConfig = EconConfig(),
    n_dropped_undefined: int = 0,
) -> RegressionResult:
    """Two-way within fit with and without ``focus`` on one demeaned sample."""
    names = list(names)
    stacked = np.column_stack([y, X])
    w = within_transform(stacked, groups, tol=config.tol, max_iter=config.max_iter)
    yd, Xd = w.data[:, 0], w.data[:, 1:]
    df_fe = absorbed_dof(w.groups)
    clusters = w.groups[0] if config.se_type == "cluster" else None
    full = ols_robust(Xd, yd, names, config.se_type, clusters, df_fe)
    j = names.index(focus)
    rest_names = names[:j] + names[j + 1 :]
    restricted = ols_robust(np.delete(Xd, j, axis=1), yd, rest_names, config.se_type, clusters, df_fe)
    lo, hi = zip(*(full.conf_int(nm) for nm in full.names)) if full.names else ((), ())
    return RegressionResult(
        dependent=dependent,
        names=full.names,
        coef=full.coef.tolist(),
        se=full.se.tolist(),
        t=[_finite(v) for v in full.t],
        p=full.p.tolist(),
        r2_full=full.r2,
        r2_restricted=restricted.r2,
        additional_variance_pct=additional_variance(full.r2, restricted.r2, full.n, restricted.n),
        n_obs=full.n,
        n_dropped_singletons=w.n_dropped,
        n_dropped_undefined=n_dropped_undefined,
        iterations=w.iterations,
        df_resid=full.df_resid,
        dropped_columns=full.dropped_columns,
        ci_low=list(lo),
        ci_high=list(hi),
    )


def fit_panel(rows: Sequence[PanelRow], dependent: str, config: EconConfig = EconConfig(), n_dropped_undefined: int = 0) -> RegressionResult:
    if len(rows) < 2:
        raise EstimationError(f"{dependent}: only {len(rows)} panel row(s)")
    y, X, groups = panel_arrays(rows)
    return fit_arrays(y, X, groups, REGRESSORS, dependent, "l_ratio", config, n_dropped_undefined)


def run_regressions(corpus: Corpus, metrics: Mapping[str, object], config: EconConfig = EconConfig()) -> list[RegressionResult]:
    """Fit all six dependents, each on its own sample of defined outcomes."""
    first = first_publication_years(corpus)
    results = []
    for dep in DEPENDENTS:
        rows, n_undef = build_panel(corpus, metrics, dep, config, first)
        results.append(fit_panel(rows, dep, config, n_undef))
    return results
