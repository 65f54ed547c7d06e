"""Command-line driver: ``scimetrics <subcommand> --config run.json``.

Everything that affects numbers lives in the JSON config; flags only pick
the subcommand, the config path and verbosity. Each subcommand writes a
manifest to ``<output_dir>/manifests/<subcommand>.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .contributions import (
    ContributionOptions,
    all_contributions,
    group_distance_report,
    write_contributions_csv,
)
from .corpus import CorpusError, build_citation_index, load_corpus, validate
from .econometrics import ConvergenceError, EconConfig, EstimationError, run_regressions
from .embedding import EmbeddingError, NonFiniteError, TrainConfig, build_pair_stream, export_tsv, load_embedding, save_embedding, train_skipgram
from .metrics import MetricOptions, compute_metrics, hierarchy_trend, read_metrics_csv, write_metrics_csv, write_trend_csv
from .synth import GeneratorConfig, InfeasibleConfig, generate

logger = logging.getLogger("scimetrics")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_CONVERGENCE = 4
EXIT_PRECONDITION = 5

SUBCOMMANDS = ("ingest", "train", "metrics", "contributions", "regress", "trend", "synth", "all")
PIPELINE = ("ingest", "train", "metrics", "contributions", "regress", "trend")

EMBEDDING_FILE = "embeddings.emb"
EMBEDDING_TSV = "embeddings.tsv"
METRICS_FILE = "metrics.csv"
CONTRIB_FILE = "contributions.csv"
DISTANCES_FILE = "group_distances.json"
REGRESSIONS_FILE = "regressions.json"
TREND_FILE = "trend.csv"
VALIDATION_FILE = "validation.json"


class ConfigError(ValueError):
    pass


class PreconditionError(RuntimeError):
    pass


def derive_seed(seed: int, component: str) -> int:
    """Fixed derivation of a component sub-seed from the top-level seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(component.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class PipelineConfig:
    papers: Path
    authorships: Path
    output_dir: Path
    seed: int = 0
    train: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    contributions: dict = field(default_factory=dict)
    econometrics: dict = field(default_factory=dict)
    trend: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, {**self.train, "seed": derive_seed(self.seed, "train")}, "train")

    def metric_options(self) -> MetricOptions:
        return _build(MetricOptions, self.metrics, "metrics")

    def contribution_options(self) -> tuple[ContributionOptions, int, float]:
        opts = dict(self.contributions)
        B = opts.pop("B", 2000)
        level = opts.pop("level", 0.95)
        if not isinstance(B, int) or B < 1 or not 0 < level < 1:
            raise ConfigError("contributions: B must be a positive integer and level in (0, 1)")
        return _build(ContributionOptions, opts, "contributions"), B, level

    def econ_config(self) -> EconConfig:
        return _build(EconConfig, self.econometrics, "econometrics")

    def trend_options(self) -> dict:
        opts = {"bucket_years": 5, "funded_only": False, "origin": None, **self.trend}
        unknown = set(opts) - {"bucket_years", "funded_only", "origin"}
        if unknown:
            raise ConfigError(f"trend: unknown key(s) {sorted(unknown)}")
        if not isinstance(opts["bucket_years"], int) or opts["bucket_years"] < 1:
            raise ConfigError("trend: bucket_years must be a positive integer")
        return opts

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig.from_dict({**self.synth, "seed": derive_seed(self.seed, "synth")})
        except TypeError as exc:
            raise ConfigError(f"synth: {exc}") from None


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"seed", "input", "output_dir", "train", "metrics", "contributions", "econometrics", "trend", "synth"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    base = path.parent
    inp = raw.get("input", {})
    if "papers" not in inp or "authorships" not in inp:
        raise ConfigError("config.input needs 'papers' and 'authorships'")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    sections = {k: raw.get(k, {}) for k in ("train", "metrics", "contributions", "econometrics", "trend", "synth")}
    for k, v in sections.items():
        if not isinstance(v, dict):
            raise ConfigError(f"config.{k} must be an object")
    cfg = PipelineConfig(
        papers=base / inp["papers"],
        authorships=base / inp["authorships"],
        output_dir=base / raw.get("output_dir", "out"),
        seed=seed,
        raw=raw,
        **sections,
    )
    # surface every section's errors before any command touches the inputs
    cfg.train_config()
    cfg.metric_options()
    cfg.contribution_options()
    cfg.econ_config()
    cfg.trend_options()
    cfg.generator_config()
    return cfg


# -- manifests ---------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy

    return {
        "scimetrics": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class Run:
    """Collects the provenance of one subcommand and writes its manifest."""

    def __init__(self, cfg: PipelineConfig, subcommand: str, inputs: list[Path]):
        self.cfg = cfg
        self.subcommand = subcommand
        missing = [p for p in inputs if not p.exists()]
        if missing:
            raise PreconditionError(f"{subcommand}: missing input file {missing[0]}")
        self.inputs = {str(p.name): _sha256(p) for p in inputs}
        header = {
            "subcommand": subcommand,
            "config": cfg.raw,
            "inputs": self.inputs,
            "versions": _versions(),
        }
        self.header = header
        self.run_id = hashlib.sha256(_canonical(header)).hexdigest()
        self.outputs: list[Path] = []
        self.summary: dict = {}
        cfg.output_dir.mkdir(parents=True, exist_ok=True)

    def out(self, name: str) -> Path:
        p = self.cfg.output_dir / name
        self.outputs.append(p)
        return p

    def write_manifest(self) -> Path:
        manifest = {
            **self.header,
            "run_id": self.run_id,
            "outputs": {p.name: _sha256(p) for p in self.outputs},
            "summary": self.summary,
        }
        mdir = self.cfg.output_dir / "manifests"
        mdir.mkdir(parents=True, exist_ok=True)
        path = mdir / f"{self.subcommand}.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        return path


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def _load(cfg: PipelineConfig):
    return load_corpus(cfg.papers, cfg.authorships)


def cmd_ingest(cfg: PipelineConfig) -> None:
    run = Run(cfg, "ingest", [cfg.papers, cfg.authorships])
    corpus = _load(cfg)
    index = build_citation_index(corpus)
    report = validate(corpus, index)
    run.summary = {"n_papers": len(corpus), "n_authorships": len(corpus.authorships), "n_edges": index.n_edges}
    _dump_json({**report.to_json(), **run.summary, "run_id": run.run_id}, run.out(VALIDATION_FILE))
    run.write_manifest()
    logger.info("ingested %d papers, %d authorships; %d anomalies", len(corpus), len(corpus.authorships), report.n_anomalies)


def cmd_train(cfg: PipelineConfig) -> None:
    run = Run(cfg, "train", [cfg.papers, cfg.authorships])
    tc = cfg.train_config()
    corpus = _load(cfg)
    pairs = build_pair_stream(corpus, derive_seed(cfg.seed, "pairs"))
    table = train_skipgram(pairs, tc)
    save_embedding(table, run.out(EMBEDDING_FILE))
    export_tsv(table, run.out(EMBEDDING_TSV))
    run.summary = {"vocab": len(table.vocab), "pairs_per_epoch": len(pairs), "train": asdict(tc), "deterministic": tc.deterministic}
    run.write_manifest()
    logger.info("trained %d keyword vectors on %d pairs", len(table.vocab), len(pairs))


def cmd_metrics(cfg: PipelineConfig) -> None:
    emb = cfg.output_dir / EMBEDDING_FILE
    if not emb.exists():
        raise PreconditionError(f"metrics: embedding file {emb} not found; run 'train' first")
    run = Run(cfg, "metrics", [cfg.papers, cfg.authorships, emb])
    opts = cfg.metric_options()
    corpus = _load(cfg)
    index = build_citation_index(corpus)
    table = load_embedding(emb)
    metrics, summary = compute_metrics(corpus, index, table, opts)
    write_metrics_csv(metrics, run.out(METRICS_FILE))
    run.summary = summary.to_json()
    run.write_manifest()
    logger.info("computed metrics for %d papers", len(metrics))


def cmd_contributions(cfg: PipelineConfig) -> None:
    run = Run(cfg, "contributions", [cfg.papers, cfg.authorships])
    opts, B, level = cfg.contribution_options()
    corpus = _load(cfg)
    rows = all_contributions(corpus, build_citation_index(corpus), opts)
    if not rows:
        raise PreconditionError("contributions: corpus has no authorships")
    seed = derive_seed(cfg.seed, "bootstrap")
    report = group_distance_report(rows, B=B, level=level, seed=seed)
    write_contributions_csv(rows, run.out(CONTRIB_FILE))
    _dump_json({**report.to_json(), "_provenance": {"run_id": run.run_id, "n_rows": report.n_rows, "n_papers": report.n_papers}}, run.out(DISTANCES_FILE))
    run.summary = {"n_rows": len(rows), "pop_zero": [k for k, d in report.indices.items() if d.pop_zero]}
    run.write_manifest()


def cmd_regress(cfg: PipelineConfig) -> None:
    mpath = cfg.output_dir / METRICS_FILE
    if not mpath.exists():
        raise PreconditionError(f"regress: metrics file {mpath} not found; run 'metrics' first")
    run = Run(cfg, "regress", [cfg.papers, cfg.authorships, mpath])
    ec = cfg.econ_config()
    corpus = _load(cfg)
    metrics = read_metrics_csv(mpath)
    results = run_regressions(corpus, metrics, ec)
    echo = {**asdict(ec), "seed": cfg.seed, "run_id": run.run_id, "fixed_effects": ["author_id", "field_id"]}
    payload = []
    for r in results:
        transform = ec.transform if r.dependent in ("lead_productivity", "support_productivity", "impact_short", "impact_long") else "raw"
        payload.append({**r.to_json(), "dependent_transform": transform, "config": echo})
    _dump_json(payload, run.out(REGRESSIONS_FILE))
    run.summary = {r.dependent: {"n_obs": r.n_obs, "additional_variance_pct": r.additional_variance_pct} for r in results}
    run.write_manifest()
    if logger.isEnabledFor(logging.INFO):
        for r in results:
            lo, hi = r.interval("l_ratio") if "l_ratio" in r.names else (float("nan"),) * 2
            print(
                f"{r.dependent:22s} n={r.n_obs:6d} b_l_ratio={r.coefficient('l_ratio') if 'l_ratio' in r.names else float('nan'):+.4f} "
                f"[{lo:+.4f}, {hi:+.4f}] R2={r.r2_full:.4f} R2_restr={r.r2_restricted:.4f} "
                f"addvar={r.additional_variance_pct if r.additional_variance_pct is not None else float('nan'):.1f}%"
            )


def cmd_trend(cfg: PipelineConfig) -> None:
    run = Run(cfg, "trend", [cfg.papers, cfg.authorships])
    opts = cfg.trend_options()
    tie = cfg.metric_options().tie_policy
    corpus = _load(cfg)
    series = hierarchy_trend(corpus, opts["funded_only"], opts["bucket_years"], opts["origin"], tie)
    write_trend_csv(series, run.out(TREND_FILE), opts["bucket_years"])
    run.summary = {"n_buckets": len(series), **opts}
    run.write_manifest()


def cmd_synth(cfg: PipelineConfig) -> None:
    gc = cfg.generator_config()
    cfg.papers.parent.mkdir(parents=True, exist_ok=True)
    cfg.authorships.parent.mkdir(parents=True, exist_ok=True)
    p, a, t = generate(gc, cfg.papers.parent)
    if p != cfg.papers:
        p.replace(cfg.papers)
    if a != cfg.authorships:
        a.replace(cfg.authorships)
    run = Run(cfg, "synth", [])
    run.outputs = [cfg.papers, cfg.authorships, t]
    run.summary = {"n_papers": gc.n_papers, "seed": gc.seed}
    run.write_manifest()


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "metrics": cmd_metrics,
    "contributions": cmd_contributions,
    "regress": cmd_regress,
    "trend": cmd_trend,
    "synth": cmd_synth,
}


def run(subcommand: str, cfg: PipelineConfig) -> None:
    steps = PIPELINE if subcommand == "all" else (subcommand,)
    for step in steps:
        COMMANDS[step](cfg)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="scimetrics", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("-c", "--config", required=True, help="JSON run configuration")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config)
        run(args.subcommand, cfg)
    except (ConfigError, InfeasibleConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except NonFiniteError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (PreconditionError, EstimationError, EmbeddingError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
