import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scimetrics.embedding import (
    EmbeddingError,
    EmbeddingTable,
    TrainConfig,
    _sgd_epoch,
    alias_table,
    approximation_correlation,
    build_pair_stream,
    draw_alias,
    draw_negatives,
    exact_pmi,
    export_tsv,
    load_embedding,
    save_embedding,
    sgns_grad,
    sgns_loss,
    train_skipgram,
)

from conftest import make_corpus, paper


def kw_corpus(keyword_sets):
    return make_corpus([paper(f"P{i}", kws=k) for i, k in enumerate(keyword_sets)])


# -- pair stream -------------------------------------------------------------


def test_pair_stream_three_keywords():
    pairs = build_pair_stream(kw_corpus([{"a", "b", "c"}]))
    assert sorted(pairs.decoded()) == sorted(
        [("a", "b"), ("a", "c"), ("b", "a"), ("b", "c"), ("c", "a"), ("c", "b")]
    )


def test_pair_stream_skips_short_papers():
    pairs = build_pair_stream(kw_corpus([{"a"}, set(), {"b", "c"}]))
    assert len(pairs) == 2 and set(pairs.vocab) == {"b", "c"}


@given(st.lists(st.sets(st.sampled_from("abcdefgh"), max_size=6), max_size=12), st.integers(0, 10))
@settings(max_examples=50, deadline=None)
def test_pair_stream_size_and_seed(sets, seed):
    c = kw_corpus(sets)
    pairs = build_pair_stream(c, seed)
    assert len(pairs) == sum(len(s) * (len(s) - 1) for s in sets if len(s) >= 2)
    assert (pairs.targets != pairs.contexts).all()
    again = build_pair_stream(c, seed)
    assert np.array_equal(pairs.targets, again.targets) and np.array_equal(pairs.contexts, again.contexts)


def test_empty_vocab_rejected():
    with pytest.raises(EmbeddingError, match="empty vocabulary"):
        train_skipgram(build_pair_stream(kw_corpus([{"a"}])))


# -- sampling ----------------------------------------------------------------


def test_alias_distribution():
    probs = np.array([1.0, 2.0, 3.0, 4.0])
    prob, alias = alias_table(probs)
    draws = draw_alias(prob, alias, 200_000, np.random.default_rng(0))
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.allclose(freq, probs / probs.sum(), atol=0.005)


def test_negatives_avoid_true_context():
    prob, alias = alias_table(np.array([10.0, 1.0, 1.0]))
    ctx = np.zeros(5000, dtype=np.int64)
    negs = draw_negatives(ctx, 5, prob, alias, np.random.default_rng(1))
    assert not (negs == 0).any()
    assert ((negs >= 1) | (negs == -1)).all()


def test_negatives_single_word_all_skipped():
    prob, alias = alias_table(np.array([1.0]))
    negs = draw_negatives(np.zeros(3, dtype=np.int64), 2, prob, alias, np.random.default_rng(0))
    assert (negs == -1).all()


# -- objective and update ----------------------------------------------------


def _fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v_in, v_pos, v_negs = rng.normal(size=10), rng.normal(size=10), rng.normal(size=(5, 10))
        d_in, d_pos, d_negs = sgns_grad(v_in, v_pos, v_negs)
        assert _rel(d_in, _fd_grad(lambda x: sgns_loss(x, v_pos, v_negs), v_in)) <= 1e-4
        assert _rel(d_pos, _fd_grad(lambda x: sgns_loss(v_in, x, v_negs), v_pos)) <= 1e-4
        assert _rel(d_negs, _fd_grad(lambda x: sgns_loss(v_in, v_pos, x), v_negs)) <= 1e-4


def test_kernel_step_is_negative_gradient_step():
    rng = np.random.default_rng(3)
    V, d, lr = 8, 6, 0.05
    w_in, w_out = rng.normal(size=(V, d)), rng.normal(size=(V, d))
    negs = np.array([[2, 4, 5]])
    d_in, d_pos, d_negs = sgns_grad(w_in[0], w_out[1], w_out[negs[0]])
    new_in, new_out = w_in.copy(), w_out.copy()
    _sgd_epoch(new_in, new_out, np.array([0]), np.array([1]), negs, 0, 1, lr, lr)
    assert np.allclose(new_in[0] - w_in[0], -lr * d_in, atol=1e-12)
    assert np.allclose(new_out[1] - w_out[1], -lr * d_pos, atol=1e-12)
    assert np.allclose(new_out[negs[0]] - w_out[negs[0]], -lr * d_negs, atol=1e-12)


def test_loss_value():
    z = np.zeros(3)
    assert sgns_loss(z, z, np.zeros((2, 3))) == pytest.approx(3 * math.log(2))


# -- training ----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(dimension=0)
    with pytest.raises(ValueError):
        TrainConfig(negatives=-1)
    assert TrainConfig().deterministic and not TrainConfig(workers=2).deterministic


def test_training_is_deterministic():
    pairs = build_pair_stream(kw_corpus([{"a", "b", "c"}, {"c", "d"}, {"a", "d", "e"}] * 5))
    cfg = TrainConfig(dimension=8, epochs=3, seed=7)
    a, b = train_skipgram(pairs, cfg), train_skipgram(pairs, cfg)
    assert np.array_equal(a.in_vectors, b.in_vectors) and np.array_equal(a.out_vectors, b.out_vectors)
    c = train_skipgram(pairs, TrainConfig(dimension=8, epochs=3, seed=8))
    assert not np.array_equal(a.in_vectors, c.in_vectors)


def test_zero_epochs_rejected():
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)


def test_initialisation_ranges():
    pairs = build_pair_stream(kw_corpus([{"a", "b"}, {"c", "d"}]))
    t = train_skipgram(pairs, TrainConfig(dimension=4, epochs=1, lr_start=1e-12, lr_end=1e-12))
    assert (np.abs(t.in_vectors) <= 0.5 / 4).all() and np.abs(t.out_vectors).max() < 1e-12


def test_three_word_separation():
    # a and b always together, a and c never
    sets = [{"a", "b"}] * 500 + [{"b", "c"}] * 500
    t = train_skipgram(build_pair_stream(kw_corpus(sets)), TrainConfig(dimension=10))
    assert t.inner("a", "b") > t.inner("a", "c")


def test_two_clusters_separate():
    rng = np.random.default_rng(0)
    left, right = list("abcdef"), list("uvwxyz")
    sets = [set(rng.choice(left if i % 2 else right, 3, replace=False)) for i in range(400)]
    t = train_skipgram(build_pair_stream(kw_corpus(sets)), TrainConfig(dimension=16, epochs=5))
    within = np.mean([t.inner(a, b) for g in (left, right) for a in g for b in g if a != b])
    across = np.mean([t.inner(a, b) for a in left for b in right] + [t.inner(b, a) for a in left for b in right])
    assert within > across + 1.0


def test_hogwild_runs_and_is_finite():
    pairs = build_pair_stream(kw_corpus([{"a", "b", "c"}] * 30))
    t = train_skipgram(pairs, TrainConfig(dimension=4, epochs=2, workers=2))
    assert np.isfinite(t.in_vectors).all()


# -- exact PMI ---------------------------------------------------------------


def _pmi_oracle(sets):
    """Direct probability enumeration over ordered pairs."""
    pairs = [(a, b) for s in sets if len(s) >= 2 for a in s for b in s if a != b]
    n = len(pairs)
    joint = {}
    left = {}
    for a, b in pairs:
        joint[(a, b)] = joint.get((a, b), 0) + 1 / n
        left[a] = left.get(a, 0) + 1 / n
    return {ab: math.log(p / (left[ab[0]] * left[ab[1]])) for ab, p in joint.items()}


def test_pmi_hand_counts():
    sets = [{"a", "b", "c"}, {"a", "b"}, {"c", "d"}, {"a", "d"}]
    pmi = exact_pmi(kw_corpus(sets))
    got = pmi.lookup()
    assert pmi.total == 12
    assert got[("a", "b")] == pytest.approx(math.log(2), abs=1e-12)
    assert got[("c", "d")] == pytest.approx(math.log(2), abs=1e-12)
    assert got[("a", "c")] == pytest.approx(0.0, abs=1e-12)
    assert got[("b", "c")] == pytest.approx(math.log(4 / 3), abs=1e-12)
    assert got[("a", "d")] == pytest.approx(math.log(1.5), abs=1e-12)
    assert ("b", "d") not in got


def test_pmi_always_together():
    got = exact_pmi(kw_corpus([{"a", "b"}] * 4)).lookup()
    assert got[("a", "b")] == pytest.approx(-math.log(0.5), abs=1e-12)


def test_pmi_balanced_design():
    V = 50
    words = [f"w{i:02d}" for i in range(V)]
    sets = [{words[i], words[j]} for i in range(V) for j in range(i + 1, V)]
    pmi = exact_pmi(kw_corpus(sets))
    assert np.allclose(pmi.pmi, math.log(V / (V - 1)), atol=0.05)


@given(st.lists(st.sets(st.sampled_from("abcdefg"), min_size=0, max_size=5), min_size=1, max_size=15))
@settings(max_examples=60, deadline=None)
def test_pmi_matches_oracle_and_is_symmetric(sets):
    oracle = _pmi_oracle(sets)
    pmi = exact_pmi(kw_corpus(sets), k=5)
    got = pmi.lookup()
    assert set(got) == set(oracle)
    for key, v in oracle.items():
        assert got[key] == pytest.approx(v, abs=1e-12)
        assert got[key] == got[key[::-1]]
    assert np.allclose(pmi.shifted, pmi.pmi - math.log(5))


def test_pmi_cap():
    with pytest.raises(EmbeddingError, match="cap"):
        exact_pmi(kw_corpus([{"a", "b", "c"}]), cap=2)


def _table_from(pmi, dots_fn):
    V = len(pmi.vocab)
    w_in = np.zeros((V, V))
    w_out = np.eye(V)
    for i, j, v in zip(pmi.rows, pmi.cols, pmi.shifted):
        w_in[i, j] = dots_fn(v)
    return EmbeddingTable(dict(pmi.vocab), w_in, w_out, 5, 0)


def test_correlation_perfect_and_inverse():
    rng = np.random.default_rng(0)
    sets = [set(rng.choice(list("abcdefghij"), rng.integers(2, 5), replace=False)) for _ in range(30)]
    pmi = exact_pmi(kw_corpus(sets))
    assert approximation_correlation(_table_from(pmi, lambda v: 2 * v + 1), pmi).r == pytest.approx(1.0, abs=1e-12)
    assert approximation_correlation(_table_from(pmi, lambda v: -v), pmi).r == pytest.approx(-1.0, abs=1e-12)


def test_correlation_needs_pairs():
    pmi = exact_pmi(kw_corpus([{"a", "b"}]))
    with pytest.raises(EmbeddingError, match="at least 10"):
        approximation_correlation(_table_from(pmi, lambda v: v), pmi)


# -- persistence -------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = EmbeddingTable({"α": 0, "b": 1, "c c": 2}, rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), 7, 123)
    save_embedding(t, tmp_path / "e.emb")
    back = load_embedding(tmp_path / "e.emb")
    assert back.vocab == t.vocab and back.negatives == 7 and back.seed == 123
    assert np.array_equal(back.in_vectors, t.in_vectors) and np.array_equal(back.out_vectors, t.out_vectors)


def test_load_rejects_corruption(tmp_path):
    t = EmbeddingTable({"a": 0}, np.ones((1, 2)), np.ones((1, 2)), 5, 0)
    save_embedding(t, tmp_path / "e.emb")
    raw = (tmp_path / "e.emb").read_bytes()
    (tmp_path / "short.emb").write_bytes(raw[:-3])
    with pytest.raises(EmbeddingError, match="matrix bytes"):
        load_embedding(tmp_path / "short.emb")
    (tmp_path / "magic.emb").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(EmbeddingError, match="magic"):
        load_embedding(tmp_path / "magic.emb")


def test_tsv_export(tmp_path):
    t = EmbeddingTable({"b": 1, "a": 0}, np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [7.0, 8.0]]), 5, 0)
    export_tsv(t, tmp_path / "e.tsv")
    lines = (tmp_path / "e.tsv").read_text().splitlines()
    assert lines == ["a\t1.0\t2.0\t5.0\t6.0", "b\t3.0\t4.0\t7.0\t8.0"]
