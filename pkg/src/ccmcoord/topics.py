"""TF-IDF + NMF topic clustering of users, used to prune the CCM pair search."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

UNASSIGNED = -1
DEFAULT_TOPICS = 5
DEFAULT_MAX_ITER = 400
DEFAULT_TOL = 1e-5

_URL = re.compile(r"https?://\S+|www\.\S+", re.IGNORECASE)
_MENTION = re.compile(r"@\w+")
_WORD = re.compile(r"[^\W_]+")


def load_stopwords(*languages: str) -> frozenset[str]:
    """Bundled stop-word lists; ``"en"`` and ``"ru"`` are shipped."""
    words: set[str] = set()
    for lang in languages or ("en", "ru"):
        source = resources.files(__package__).joinpath("data", f"stopwords_{lang}.txt")
        if not source.is_file():
            raise ValueError(f"no bundled stop-word list for language {lang!r}")
        text = source.read_text(encoding="utf-8")
        words.update(w.strip().lower() for w in text.splitlines() if w.strip())
    return frozenset(words)


def read_stopword_file(path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(w.strip().lower() for w in lines if w.strip())


def tokenize(text: str, stopwords: Iterable[str] = ()) -> list[str]:
    """Lowercased Unicode word tokens, URLs and @mentions removed."""
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else set(stopwords)
    text = _MENTION.sub(" ", _URL.sub(" ", text.lower()))
    return [t for t in _WORD.findall(text) if t not in stop]


@dataclass
class TfidfCorpus:
    vocabulary: dict[str, int]
    matrix: sp.csr_matrix  # documents x terms
    idf: np.ndarray
    doc_ids: list[str]
    empty_docs: list[str] = field(default_factory=list)
    stopwords: frozenset[str] = frozenset()

    @property
    def terms(self) -> list[str]:
        out = [""] * len(self.vocabulary)
        for term, j in self.vocabulary.items():
            out[j] = term
        return out

    def vectorize(self, texts: Sequence[str]) -> sp.csr_matrix:
        """TF-IDF rows for new texts under this corpus' vocabulary and idf."""
        counts = _count_matrix([tokenize(t, self.stopwords) for t in texts], self.vocabulary)
        return _l2_normalize(counts @ sp.diags(self.idf))


def _count_matrix(token_lists: Sequence[Sequence[str]], vocabulary: Mapping[str, int]) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i, tokens in enumerate(token_lists):
        for term, c in Counter(t for t in tokens if t in vocabulary).items():
            rows.append(i)
            cols.append(vocabulary[term])
            vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(token_lists), len(vocabulary)), dtype=float)


def _l2_normalize(m: sp.csr_matrix) -> sp.csr_matrix:
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    return sp.csr_matrix(sp.diags(1.0 / norms) @ m)


def build_tfidf(docs: Sequence[tuple[str, str]], stopwords: Iterable[str] = frozenset()) -> TfidfCorpus:
    """Smoothed TF-IDF: raw counts times ``ln((1 + D) / (1 + df)) + 1``, rows L2-normalised.

    Documents left empty after stop-word removal keep an all-zero row and
    are listed in ``empty_docs``.
    """
    stop = frozenset(stopwords)
    ids = [d for d, _ in docs]
    token_lists = [tokenize(text or "", stop) for _, text in docs]
    terms = sorted({t for tokens in token_lists for t in tokens})
    if not terms:
        raise ValueError("every document is empty after stop-word removal")
    vocabulary = {t: j for j, t in enumerate(terms)}
    counts = _count_matrix(token_lists, vocabulary)
    df = np.asarray((counts > 0).sum(axis=0)).ravel()
    n_docs = len(docs)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    empty = [ids[i] for i, tokens in enumerate(token_lists) if not tokens]
    if empty:
        logger.info("%d document(s) empty after stop-word removal", len(empty))
    matrix = _l2_normalize(counts @ sp.diags(idf))
    return TfidfCorpus(vocabulary, matrix, idf, ids, empty, stop)


# --- NMF -------------------------------------------------------------------

_TINY = np.finfo(float).tiny


def frobenius_error(V, W: np.ndarray, H: np.ndarray) -> float:
    """``||V - WH||_F``; sparse ``V`` is never densified."""
    if sp.issparse(V):
        sq = V.multiply(V).sum() - 2.0 * np.sum((V @ H.T) * W) + np.sum((W.T @ W) * (H @ H.T))
        return math.sqrt(max(float(sq), 0.0))
    return float(np.linalg.norm(np.asarray(V) - W @ H))


@dataclass
class TopicModel:
    W: np.ndarray
    H: np.ndarray
    terms: list[str] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)  # objective after init and each iteration

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def top_terms(self, count: int = 10) -> list[list[str]]:
        if not self.terms:
            return []
        return [[self.terms[j] for j in np.argsort(-row, kind="stable")[:count]] for row in self.H]


def nmf_multiplicative(V, n: int, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                       seed: int = 0) -> TopicModel:
    """Lee-Seung multiplicative updates minimising ``||V - WH||_F``.

    Factors start uniform in (0, 1]. Iteration stops after ``max_iter``
    sweeps or once the relative drop in error falls below ``tol``.
    """
    n_rows, n_cols = V.shape
    if not 1 <= n <= min(n_rows, n_cols):
        raise ValueError(f"topic count {n} outside [1, {min(n_rows, n_cols)}]")
    rng = np.random.default_rng(seed)
    # (0, 1]: 1 - U[0, 1)
    W = 1.0 - rng.random((n_rows, n))
    H = 1.0 - rng.random((n, n_cols))
    V = V.tocsr() if sp.issparse(V) else np.asarray(V, dtype=float)
    errors = [frobenius_error(V, W, H)]
    for _ in range(max_iter):
        H *= (W.T @ V) / np.maximum((W.T @ W) @ H, _TINY)
        W *= np.asarray(V @ H.T) / np.maximum(W @ (H @ H.T), _TINY)
        errors.append(frobenius_error(V, W, H))
        prev, cur = errors[-2], errors[-1]
        if prev == 0 or (prev - cur) / prev < tol:
            break
    return TopicModel(W, H, errors=errors)


def fit_nmf(corpus: TfidfCorpus, n: int = DEFAULT_TOPICS, max_iter: int = DEFAULT_MAX_ITER,
            tol: float = DEFAULT_TOL, seed: int = 0) -> TopicModel:
    model = nmf_multiplicative(corpus.matrix, n, max_iter, tol, seed)
    model.terms = corpus.terms
    return model


def nmf_transform(V, H: np.ndarray, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Non-negative topic weights for the rows of ``V`` with ``H`` held fixed."""
    V = V.tocsr() if sp.issparse(V) else np.asarray(V, dtype=float)
    W = np.full((V.shape[0], H.shape[0]), 1.0 / H.shape[0])
    HHt = H @ H.T
    VHt = np.asarray(V @ H.T)
    prev = frobenius_error(V, W, H)
    for _ in range(max_iter):
        W *= VHt / np.maximum(W @ HHt, _TINY)
        cur = frobenius_error(V, W, H)
        if prev == 0 or (prev - cur) / prev < tol:
            break
        prev = cur
    return W


def _argmax_topics(W: np.ndarray) -> np.ndarray:
    labels = np.argmax(W, axis=1)  # first maximum wins ties
    labels[W.max(axis=1) <= 0] = UNASSIGNED
    return labels


def assign_user_topics(model: TopicModel, user_docs: Mapping[str, str], corpus: TfidfCorpus) -> dict[str, int]:
    """Project each user's concatenated text onto the fitted topics and take the argmax.

    Users whose document is empty under the corpus vocabulary get ``UNASSIGNED``.
    """
    users = sorted(user_docs)
    if not users:
        return {}
    V = corpus.vectorize([user_docs[u] for u in users])
    W = nmf_transform(V, model.H)
    empty = np.asarray(V.sum(axis=1)).ravel() == 0
    labels = _argmax_topics(W)
    labels[empty] = UNASSIGNED
    return {u: int(c) for u, c in zip(users, labels)}


def user_documents(events) -> dict[str, str]:
    texts: dict[str, list[str]] = defaultdict(list)
    for ev in events:
        if ev.text:
            texts[ev.user_id].append(ev.text)
    return {u: " ".join(t) for u, t in texts.items()}


# --- model selection -------------------------------------------------------

def silhouette_samples(X: np.ndarray, labels: Sequence[int], chunk: int = 2048) -> np.ndarray:
    """Euclidean silhouette per point; members of singleton clusters score 0."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    sizes = np.bincount(inv, minlength=len(uniq)).astype(float)
    out = np.zeros(len(X))
    for lo in range(0, len(X), chunk):
        d = cdist(X[lo:lo + chunk], X)
        sums = np.stack([d[:, inv == c].sum(axis=1) for c in range(len(uniq))], axis=1)
        own = inv[lo:lo + chunk]
        rows = np.arange(len(own))
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[rows, own] / np.maximum(own_size - 1, 1), 0.0)
        means = sums / sizes
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
        out[lo:lo + chunk] = np.where(own_size > 1, s, 0.0)
    return out


def choose_topic_count(corpus: TfidfCorpus, candidate_ns: Sequence[int], max_iter: int = DEFAULT_MAX_ITER,
                       tol: float = DEFAULT_TOL, seed: int = 0,
                       sample_size: Optional[int] = None) -> tuple[int, dict[int, float]]:
    """Pick the topic count with the highest mean silhouette in topic-weight space.

    A candidate giving fewer than two non-empty clusters scores -1; ties go
    to the smallest count. ``sample_size`` caps the documents scored.
    """
    if not candidate_ns:
        raise ValueError("no candidate topic counts")
    rows = np.flatnonzero(np.diff(corpus.matrix.indptr) > 0)
    if sample_size is not None and len(rows) > sample_size:
        rows = np.sort(np.random.default_rng(seed).choice(rows, sample_size, replace=False))
    scores: dict[int, float] = {}
    for n in sorted(set(candidate_ns)):
        model = fit_nmf(corpus, n, max_iter, tol, seed)
        W = model.W[rows]
        labels = _argmax_topics(W)
        keep = labels != UNASSIGNED
        if len(np.unique(labels[keep])) < 2:
            scores[n] = -1.0
        else:
            scores[n] = float(silhouette_samples(W[keep], labels[keep]).mean())
    best = max(scores, key=lambda n: (scores[n], -n))
    return best, scores


# --- pair pruning and partition comparison ---------------------------------

def topic_pair_filter(assignment: Mapping[str, int]) -> set[tuple[str, str]]:
    """Unordered user pairs that share a topic; unassigned users drop out."""
    clusters: dict[int, list[str]] = defaultdict(list)
    for u, c in assignment.items():
        if c != UNASSIGNED:
            clusters[c].append(u)
    return {p for members in clusters.values() for p in combinations(sorted(members), 2)}


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2


def compare_partitions(p1: Mapping, p2: Mapping) -> float:
    """Adjusted Rand index between two labelings of the same elements."""
    if set(p1) != set(p2):
        raise ValueError("partitions cover different element sets")
    keys = sorted(p1, key=str)
    _, a = np.unique([str(p1[k]) for k in keys], return_inverse=True)
    _, b = np.unique([str(p2[k]) for k in keys], return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64) if keys else np.zeros((0, 0), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    n = len(keys)
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = rows * cols / total if total else 0.0
    maximum = (rows + cols) / 2
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def read_partition_csv(path) -> dict[str, str]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "cluster"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        return {row["user_id"]: row["cluster"] for row in reader}


def write_partition_csv(partition: Mapping[str, object], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "cluster"])
        for u in sorted(partition):
            writer.writerow([u, partition[u]])


def topic_report(model: TopicModel, assignment: Mapping[str, int], n_terms: int = 10) -> dict:
    counts = Counter(assignment.values())
    total = len(assignment) or 1
    return {
        "n_topics": model.n,
        "topics": [
            {"topic": t, "top_terms": terms, "user_share": counts.get(t, 0) / total}
            for t, terms in enumerate(model.top_terms(n_terms))
        ],
        "unassigned_share": counts.get(UNASSIGNED, 0) / total,
        "assignment": {u: int(assignment[u]) for u in sorted(assignment)},
    }


def write_topic_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
