import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ccmcoord.ingest import Event
from ccmcoord.topics import (
    UNASSIGNED, TopicModel, assign_user_topics, build_tfidf, choose_topic_count, compare_partitions,
    fit_nmf, frobenius_error, load_stopwords, nmf_multiplicative, nmf_transform, read_partition_csv,
    silhouette_samples, tokenize, topic_pair_filter, topic_report, user_documents, write_partition_csv,
)

from oracles import silhouette_double_loop


def test_tokenize():
    text = "RT @bob: Check https://t.co/xyz NOW!! it's_a test, a b Привет мир 42"
    assert tokenize(text) == ["rt", "check", "now", "it", "s", "a", "test", "a", "b", "привет", "мир", "42"]
    assert tokenize(text, {"rt", "now", "a", "s"}) == ["check", "it", "test", "b", "привет", "мир", "42"]


def test_stopwords_bundled():
    en, ru = load_stopwords("en"), load_stopwords("ru")
    assert "the" in en and "и" in ru
    assert load_stopwords() == en | ru
    with pytest.raises(ValueError):
        load_stopwords("xx")


def test_tfidf_df_ordering():
    corpus = build_tfidf([("d1", "a b"), ("d2", "a c")])
    assert set(corpus.vocabulary) == {"a", "b", "c"}
    idf = dict(zip(corpus.terms, corpus.idf))
    assert idf["a"] < idf["b"] == idf["c"]


def test_tfidf_vocabulary_and_idf():
    corpus = build_tfidf([("d1", "aa bb"), ("d2", "aa cc")])
    assert set(corpus.vocabulary) == {"aa", "bb", "cc"}
    idf = dict(zip(corpus.terms, corpus.idf))
    assert idf["aa"] < idf["bb"] == idf["cc"]
    assert idf["aa"] == pytest.approx(1.0) and idf["bb"] == pytest.approx(math.log(3 / 2) + 1)
    norms = np.sqrt(np.asarray(corpus.matrix.multiply(corpus.matrix).sum(axis=1)).ravel())
    assert np.allclose(norms, 1.0)


def test_tfidf_single_document_and_stopword_doc():
    one = build_tfidf([("d", "xx yy yy")])
    assert np.allclose(one.idf, one.idf[0])
    corpus = build_tfidf([("d1", "the and of"), ("d2", "apples pears")], load_stopwords("en"))
    assert corpus.empty_docs == ["d1"]
    assert corpus.matrix[0].nnz == 0
    with pytest.raises(ValueError):
        build_tfidf([("d1", "the of"), ("d2", "")], load_stopwords("en"))


def test_vectorize_ignores_unknown_terms():
    corpus = build_tfidf([("d1", "aa bb"), ("d2", "aa cc")])
    v = corpus.vectorize(["bb zz", "zz"])
    assert v.shape == (2, 3) and v[1].nnz == 0
    assert v[0, corpus.vocabulary["bb"]] == pytest.approx(1.0)


def test_frobenius_sparse_matches_dense():
    rng = np.random.default_rng(0)
    V = sp.random(30, 20, density=0.2, random_state=1, format="csr")
    W, H = rng.random((30, 4)), rng.random((4, 20))
    assert frobenius_error(V, W, H) == pytest.approx(np.linalg.norm(V.toarray() - W @ H), rel=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_non_increasing(seed):
    rng = np.random.default_rng(seed)
    V = rng.random((25, 15))
    model = nmf_multiplicative(V, 3, max_iter=200, tol=0, seed=seed)
    errs = np.array(model.errors)
    assert len(errs) == 201
    assert np.all(np.diff(errs) <= 1e-12 * errs[0])
    assert np.all(model.W >= 0) and np.all(model.H >= 0)


def test_exact_low_rank_recovery():
    rng = np.random.default_rng(3)
    V = rng.random((30, 3)) @ rng.random((3, 20))
    model = nmf_multiplicative(V, 3, max_iter=100_000, tol=0, seed=0)
    assert frobenius_error(V, model.W, model.H) <= 1e-6


def test_rank_one_matches_leading_singular_pair():
    # for a positive matrix the best rank-1 approximation is non-negative (Perron-Frobenius)
    rng = np.random.default_rng(4)
    V = rng.random((12, 9))
    s = np.linalg.svd(V, compute_uv=False)
    optimum = math.sqrt(float((s[1:] ** 2).sum()))
    model = nmf_multiplicative(V, 1, max_iter=5000, tol=0, seed=1)
    assert model.errors[-1] == pytest.approx(optimum, rel=1e-9)


def test_topic_count_range():
    V = np.ones((4, 3))
    with pytest.raises(ValueError):
        nmf_multiplicative(V, 0)
    with pytest.raises(ValueError):
        nmf_multiplicative(V, 4)


def test_transform_recovers_weights():
    rng = np.random.default_rng(5)
    H = rng.random((3, 10))
    W = rng.random((6, 3))
    est = nmf_transform(W @ H, H, max_iter=20_000, tol=0)
    assert np.allclose(est, W, atol=1e-5)


def block_corpus(n_blocks=2, docs_per_block=20, seed=0):
    rng = np.random.default_rng(seed)
    docs = []
    for b in range(n_blocks):
        words = [f"b{b}w{i}" for i in range(15)]
        for d in range(docs_per_block):
            docs.append((f"b{b}d{d}", " ".join(rng.choice(words, 8))))
    return docs


def test_disjoint_users_get_different_topics():
    docs = block_corpus()
    corpus = build_tfidf(docs)
    model = fit_nmf(corpus, 2, seed=0)
    users = {"u0": " ".join(f"b0w{i}" for i in range(15)), "u1": " ".join(f"b1w{i}" for i in range(15)), "u2": ""}
    out = assign_user_topics(model, users, corpus)
    assert out["u0"] != out["u1"] and UNASSIGNED not in (out["u0"], out["u1"])
    assert out["u2"] == UNASSIGNED
    # a user writing exactly one topic's top terms lands in that topic
    for t, terms in enumerate(model.top_terms(5)):
        assert assign_user_topics(model, {"x": " ".join(terms)}, corpus)["x"] == t


def test_silhouette_matches_double_loop():
    rng = np.random.default_rng(6)
    X = rng.random((25, 3))
    labels = rng.integers(0, 4, 25)
    labels[0] = 9  # singleton cluster
    fast = silhouette_samples(X, labels, chunk=7)
    assert np.allclose(fast, silhouette_double_loop(X.tolist(), labels.tolist()), atol=1e-12)


def test_choose_topic_count_on_two_blocks():
    corpus = build_tfidf(block_corpus(2, 25, seed=1))
    n, scores = choose_topic_count(corpus, [2, 3, 4], seed=0)
    assert n == 2 and scores[2] == max(scores.values())
    assert choose_topic_count(corpus, [5])[0] == 5
    with pytest.raises(ValueError):
        choose_topic_count(corpus, [])


def test_choose_topic_count_single_cluster_is_deterministic():
    docs = [(f"d{i}", "same words here") for i in range(10)]
    corpus = build_tfidf(docs)
    n, scores = choose_topic_count(corpus, [1, 2, 3])
    assert scores[1] == -1.0
    assert n == choose_topic_count(corpus, [1, 2, 3])[0]


def test_pair_filter():
    assert topic_pair_filter({"a": 0, "b": 0, "c": 1}) == {("a", "b")}
    assert topic_pair_filter({"a": 0, "b": UNASSIGNED, "c": 0}) == {("a", "c")}
    users = [f"u{i}" for i in range(10)]
    assert len(topic_pair_filter({u: 0 for u in users})) == 45
    big = {f"u{i:03d}": i % 5 for i in range(400)}
    assert len(topic_pair_filter(big)) == 15800


def test_ari():
    p = {i: i % 3 for i in range(12)}
    assert compare_partitions(p, p) == 1.0
    assert compare_partitions(p, {i: f"x{i % 3}" for i in range(12)}) == 1.0
    singletons = {i: i for i in range(6)}
    one = {i: 0 for i in range(6)}
    assert compare_partitions(singletons, one) == 0.0
    with pytest.raises(ValueError):
        compare_partitions({1: 0}, {2: 0})


def test_ari_known_value():
    # contingency [[2,0],[1,1]]: index 1, rows 2, cols 3, total 6, expected 1, max 2.5
    a = {0: "x", 1: "x", 2: "y", 3: "y"}
    b = {0: 0, 1: 0, 2: 0, 3: 1}
    assert compare_partitions(a, b) == pytest.approx(0.0)
    c = {0: 0, 1: 0, 2: 1, 3: 2}
    # index 1, rows 2, cols 1, expected 1/3, max 1.5
    assert compare_partitions(a, c) == pytest.approx((1 - 1 / 3) / (1.5 - 1 / 3))


def test_partition_csv_and_report(tmp_path):
    write_partition_csv({"b": 1, "a": 0}, tmp_path / "p.csv")
    assert read_partition_csv(tmp_path / "p.csv") == {"a": "0", "b": "1"}
    (tmp_path / "bad.csv").write_text("user,c\n")
    with pytest.raises(ValueError, match="cluster"):
        read_partition_csv(tmp_path / "bad.csv")
    model = TopicModel(np.ones((2, 2)), np.array([[1.0, 0.0], [0.0, 1.0]]), ["aa", "bb"])
    rep = topic_report(model, {"u": 0, "v": UNASSIGNED})
    assert rep["topics"][0]["top_terms"][0] == "aa" and rep["unassigned_share"] == 0.5


def test_user_documents():
    events = [Event("a", 1, "xx"), Event("a", 2, "yy"), Event("b", 3)]
    assert user_documents(events) == {"a": "xx yy"}
