"""Skip-gram keyword embeddings with negative sampling, plus an exact PMI oracle.

Keywords on the same paper form a full-bag context window: every ordered
pair ``(i, j)`` with ``i != j`` is one training example. The item table
(``in_vectors``) and context table (``out_vectors``) are kept separate, as
novelty scores use their cross inner products.
"""

from __future__ import annotations

import itertools
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .corpus import Corpus
from .econometrics import pearson

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIIq")
DEFAULT_VOCAB_CAP = 20_000
MAX_NEGATIVE_RETRIES = 100


class EmbeddingError(RuntimeError):
    pass


class NonFiniteError(EmbeddingError):
    """Training produced NaN or Inf."""


@dataclass(frozen=True)
class TrainConfig:
    dimension: int = 100
    negatives: int = 5
    epochs: int = 5
    lr_start: float = 0.025
    lr_end: float = 0.0001
    subsample: float = 0.0
    smoothing: float = 0.75
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ValueError("learning rates must be positive")
        if self.lr_end > self.lr_start:
            raise ValueError("learning rate must be non-increasing")
        if self.subsample < 0:
            raise ValueError("subsample threshold must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def deterministic(self) -> bool:
        return self.workers == 1


@dataclass
class PairStream:
    """Ordered keyword pairs encoded against a contiguous vocabulary."""

    vocab: dict[str, int]
    targets: np.ndarray
    contexts: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    def decoded(self) -> list[tuple[str, str]]:
        inv = {i: w for w, i in self.vocab.items()}
        return [(inv[t], inv[c]) for t, c in zip(self.targets.tolist(), self.contexts.tolist())]


@dataclass
class EmbeddingTable:
    vocab: dict[str, int]
    in_vectors: np.ndarray
    out_vectors: np.ndarray
    negatives: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.in_vectors.shape != self.out_vectors.shape:
            raise EmbeddingError("item and context tables differ in shape")
        if self.in_vectors.shape[0] != len(self.vocab):
            raise EmbeddingError("vocabulary size does not match table rows")

    @property
    def dimension(self) -> int:
        return self.in_vectors.shape[1]

    def inner(self, i: str, j: str) -> float:
        return float(self.in_vectors[self.vocab[i]] @ self.out_vectors[self.vocab[j]])


def _paper_vocab(corpus: Corpus) -> dict[str, int]:
    words = set()
    for p in corpus.papers.values():
        if len(p.keywords) >= 2:
            words.update(p.keywords)
    return {w: i for i, w in enumerate(sorted(words))}


def build_pair_stream(corpus: Corpus, seed: int = 0) -> PairStream:
    """Every ordered pair of distinct keywords per paper, in a seeded shuffle."""
    vocab = _paper_vocab(corpus)
    targets: list[int] = []
    contexts: list[int] = []
    for p in corpus.papers.values():
        if len(p.keywords) < 2:
            continue
        ids = sorted(vocab[k] for k in p.keywords)
        for i, j in itertools.permutations(ids, 2):
            targets.append(i)
            contexts.append(j)
    t = np.asarray(targets, dtype=np.int64)
    c = np.asarray(contexts, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(t))
    return PairStream(vocab, t[order], c[order])


# -- negative sampling -------------------------------------------------------


def alias_table(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Walker/Vose alias table for O(1) draws from a discrete distribution."""
    n = len(probs)
    scaled = np.asarray(probs, dtype=np.float64) * n / probs.sum()
    prob = np.zeros(n)
    alias = np.zeros(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


def draw_alias(prob: np.ndarray, alias: np.ndarray, size, rng: np.random.Generator) -> np.ndarray:
    idx = rng.integers(0, len(prob), size=size)
    u = rng.random(size=size)
    return np.where(u < prob[idx], idx, alias[idx])


def draw_negatives(
    contexts: np.ndarray, k: int, prob: np.ndarray, alias: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """k negatives per pair; a draw equal to the true context is redrawn, then marked -1."""
    negs = draw_alias(prob, alias, (len(contexts), k), rng)
    for _ in range(MAX_NEGATIVE_RETRIES):
        clash = negs == contexts[:, None]
        n_clash = int(clash.sum())
        if not n_clash:
            break
        negs[clash] = draw_alias(prob, alias, n_clash, rng)
    negs[negs == contexts[:, None]] = -1
    return negs


# -- objective ---------------------------------------------------------------


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_loss(v_in: np.ndarray, v_pos: np.ndarray, v_negs: np.ndarray) -> float:
    """Negative-sampling loss for one (target, context, negatives) sample."""
    return float(-(_log_sigmoid(v_in @ v_pos) + _log_sigmoid(-(v_negs @ v_in)).sum()))


def sgns_grad(v_in: np.ndarray, v_pos: np.ndarray, v_negs: np.ndarray):
    """Analytic gradient of :func:`sgns_loss` w.r.t. the item vector, context vector and negatives."""
    def sig(x):
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    g_pos = sig(v_in @ v_pos) - 1.0
    g_neg = sig(v_negs @ v_in)
    d_in = g_pos * v_pos + g_neg @ v_negs
    d_pos = g_pos * v_in
    d_negs = g_neg[:, None] * v_in[None, :]
    return d_in, d_pos, d_negs


@numba.njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _sgd_range(w_in, w_out, targets, contexts, negs, lo, hi, step0, total, lr_start, lr_end, buf):
    d = w_in.shape[1]
    k = negs.shape[1]
    denom = max(total - 1, 1)
    for n in range(lo, hi):
        lr = lr_start - (lr_start - lr_end) * (step0 + n) / denom
        t = targets[n]
        for x in range(d):
            buf[x] = 0.0
        for s in range(k + 1):
            if s == 0:
                c = contexts[n]
                label = 1.0
            else:
                c = negs[n, s - 1]
                if c < 0:
                    continue
                label = 0.0
            f = 0.0
            for x in range(d):
                f += w_in[t, x] * w_out[c, x]
            g = (label - _sigmoid(f)) * lr
            for x in range(d):
                buf[x] += g * w_out[c, x]
                w_out[c, x] += g * w_in[t, x]
        for x in range(d):
            w_in[t, x] += buf[x]


@numba.njit(cache=True)
def _sgd_epoch(w_in, w_out, targets, contexts, negs, step0, total, lr_start, lr_end):
    buf = np.empty(w_in.shape[1])
    _sgd_range(w_in, w_out, targets, contexts, negs, 0, len(targets), step0, total, lr_start, lr_end, buf)


@numba.njit(cache=True, parallel=True)
def _sgd_epoch_hogwild(w_in, w_out, targets, contexts, negs, step0, total, lr_start, lr_end, n_shards):
    # Shards update the shared tables without locks (asynchronous SGD).
    n = len(targets)
    for s in numba.prange(n_shards):
        lo = s * n // n_shards
        hi = (s + 1) * n // n_shards
        buf = np.empty(w_in.shape[1])
        _sgd_range(w_in, w_out, targets, contexts, negs, lo, hi, step0, total, lr_start, lr_end, buf)


def _keep_mask(targets: np.ndarray, counts: np.ndarray, threshold: float, rng: np.random.Generator) -> np.ndarray:
    freq = counts / counts.sum()
    f = freq[targets]
    keep_p = np.minimum(1.0, np.sqrt(threshold / f) + threshold / f)
    return rng.random(len(targets)) < keep_p


def train_skipgram(pairs: PairStream, config: TrainConfig = TrainConfig()) -> EmbeddingTable:
    """Train item/context tables by SGD on the negative-sampling objective.

    The learning rate decays linearly from ``lr_start`` to ``lr_end`` over
    all updates. With ``workers == 1`` the result is a pure function of
    ``(pairs, config)``.
    """
    V = len(pairs.vocab)
    if V == 0:
        raise EmbeddingError("empty vocabulary: no paper has two or more keywords")
    d, k = config.dimension, config.negatives
    rng = np.random.default_rng(config.seed)
    w_in = (rng.random((V, d)) - 0.5) / d
    w_out = np.zeros((V, d))

    counts = np.bincount(pairs.contexts, minlength=V).astype(np.float64)
    prob, alias = alias_table(np.maximum(counts, 1e-12) ** config.smoothing)

    n = len(pairs)
    total = n * config.epochs
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n) if epoch else np.arange(n)
        t = pairs.targets[order]
        c = pairs.contexts[order]
        if config.subsample > 0:
            keep = _keep_mask(t, counts, config.subsample, rng)
            t, c = t[keep], c[keep]
        negs = draw_negatives(c, k, prob, alias, rng)
        if config.workers == 1:
            _sgd_epoch(w_in, w_out, t, c, negs, step, total, config.lr_start, config.lr_end)
        else:
            numba.set_num_threads(min(config.workers, numba.config.NUMBA_NUM_THREADS))
            _sgd_epoch_hogwild(w_in, w_out, t, c, negs, step, total, config.lr_start, config.lr_end, config.workers)
        step += n
        if not (np.isfinite(w_in).all() and np.isfinite(w_out).all()):
            raise NonFiniteError(
                f"non-finite values after epoch {epoch + 1}: "
                f"max|in|={np.nanmax(np.abs(w_in)):.3g}, max|out|={np.nanmax(np.abs(w_out)):.3g}"
            )
        logger.debug("epoch %d/%d done (%d pairs)", epoch + 1, config.epochs, len(t))

    return EmbeddingTable(
        vocab=dict(pairs.vocab),
        in_vectors=w_in,
        out_vectors=w_out,
        negatives=k,
        seed=config.seed,
        metadata={"epochs": config.epochs, "pairs_per_epoch": n, "workers": config.workers},
    )


# -- PMI oracle --------------------------------------------------------------


@dataclass
class PmiTable:
    """Exact (shifted) PMI over ordered co-occurrence pair counts.

    Only pairs with a positive count are present. ``pmi`` is the unshifted
    value; ``shifted = pmi - log(k)``.
    """

    vocab: dict[str, int]
    rows: np.ndarray
    cols: np.ndarray
    pair_counts: np.ndarray
    marginals: np.ndarray
    total: int
    k: int
    pmi: np.ndarray

    @property
    def shift(self) -> float:
        return math.log(self.k)

    @property
    def shifted(self) -> np.ndarray:
        return self.pmi - self.shift

    def __len__(self) -> int:
        return len(self.rows)

    def lookup(self) -> dict[tuple[str, str], float]:
        inv = {i: w for w, i in self.vocab.items()}
        return {(inv[i], inv[j]): v for i, j, v in zip(self.rows.tolist(), self.cols.tolist(), self.pmi.tolist())}


def exact_pmi(corpus: Corpus, k: int = 5, cap: int = DEFAULT_VOCAB_CAP) -> PmiTable:
    vocab = _paper_vocab(corpus)
    if len(vocab) > cap:
        raise EmbeddingError(
            f"vocabulary of {len(vocab)} exceeds the exact-PMI cap of {cap}; "
            "evaluate on a sampled sub-corpus instead"
        )
    counts: Counter[tuple[int, int]] = Counter()
    for p in corpus.papers.values():
        if len(p.keywords) < 2:
            continue
        ids = sorted(vocab[w] for w in p.keywords)
        for a, b in itertools.combinations(ids, 2):
            counts[(a, b)] += 1
    keys = sorted(counts)
    lo = np.array([a for a, _ in keys], dtype=np.int64)
    hi = np.array([b for _, b in keys], dtype=np.int64)
    n_ab = np.array([counts[key] for key in keys], dtype=np.int64)
    # each unordered co-occurrence yields both ordered pairs
    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    pc = np.concatenate([n_ab, n_ab])
    marg = np.bincount(rows, weights=pc, minlength=len(vocab)).astype(np.int64)
    total = int(pc.sum())
    pmi = np.log(pc) + math.log(max(total, 1)) - (np.log(marg[rows]) + np.log(marg[cols])) if total else np.zeros(0)
    return PmiTable(vocab, rows, cols, pc, marg, total, k, pmi)


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p_value: float
    n_pairs: int


def approximation_correlation(table: EmbeddingTable, pmi: PmiTable) -> CorrelationReport:
    """Pearson correlation between ``in_i . out_j`` and shifted PMI over observed pairs."""
    inv = {i: w for w, i in pmi.vocab.items()}
    rows, cols, target = [], [], []
    for i, j, v in zip(pmi.rows.tolist(), pmi.cols.tolist(), pmi.shifted.tolist()):
        a, b = table.vocab.get(inv[i]), table.vocab.get(inv[j])
        if a is None or b is None:
            continue
        rows.append(a)
        cols.append(b)
        target.append(v)
    if len(rows) < 10:
        raise EmbeddingError(f"only {len(rows)} pairs in common; need at least 10")
    r_idx, c_idx = np.asarray(rows), np.asarray(cols)
    dots = np.einsum("ij,ij->i", table.in_vectors[r_idx], table.out_vectors[c_idx])
    res = pearson(dots, np.asarray(target))
    return CorrelationReport(r=res.r, p_value=res.p_value, n_pairs=res.n)


# -- persistence -------------------------------------------------------------


def save_embedding(table: EmbeddingTable, path: str | Path) -> None:
    """Binary layout: header, length-prefixed UTF-8 vocab, then both float64 matrices, little-endian."""
    V, d = table.in_vectors.shape
    words = sorted(table.vocab, key=table.vocab.__getitem__)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, table.negatives, V, table.seed))
        for w in words:
            raw = w.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(table.in_vectors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.out_vectors, dtype="<f8").tobytes())


def load_embedding(path: str | Path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise EmbeddingError(f"{path}: truncated header")
    magic, d, k, V, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EmbeddingError(f"{path}: bad magic {magic!r}")
    off = _HEADER.size
    vocab = {}
    for i in range(V):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        vocab[data[off : off + n].decode("utf-8")] = i
        off += n
    size = V * d * 8
    if len(data) != off + 2 * size:
        raise EmbeddingError(f"{path}: expected {2 * size} matrix bytes, found {len(data) - off}")
    w_in = np.frombuffer(data, dtype="<f8", count=V * d, offset=off).reshape(V, d).astype(np.float64)
    w_out = np.frombuffer(data, dtype="<f8", count=V * d, offset=off + size).reshape(V, d).astype(np.float64)
    return EmbeddingTable(vocab, w_in, w_out, negatives=k, seed=seed)


def export_tsv(table: EmbeddingTable, path: str | Path) -> None:
    words = sorted(table.vocab, key=table.vocab.__getitem__)
    with open(path, "w", encoding="utf-8") as fh:
        for w in words:
            i = table.vocab[w]
            vals = np.concatenate([table.in_vectors[i], table.out_vectors[i]])
            fh.write(w + "\t" + "\t".join(repr(float(v)) for v in vals) + "\n")
