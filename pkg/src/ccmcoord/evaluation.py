"""Scoring detections against ground truth."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ingest import COORDINATED, NORMAL

NO_SCORE = -1.0  # users/pairs with no slope-passing result

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class PairBreakdown:
    cc: int = 0
    cn: int = 0
    nn: int = 0
    unlabeled: int = 0

    @property
    def total(self) -> int:
        return self.cc + self.cn + self.nn


def pair_breakdown(detected_pairs: Iterable[tuple[str, str]], labels: Mapping[str, str]) -> PairBreakdown:
    """Count detected unordered pairs by the labels of their two members."""
    counts = {"cc": 0, "cn": 0, "nn": 0, "unlabeled": 0}
    for a, b in {tuple(sorted(p)) for p in detected_pairs}:
        la, lb = labels.get(a), labels.get(b)
        if la not in (COORDINATED, NORMAL) or lb not in (COORDINATED, NORMAL):
            counts["unlabeled"] += 1
        elif la == lb == COORDINATED:
            counts["cc"] += 1
        elif la == lb == NORMAL:
            counts["nn"] += 1
        else:
            counts["cn"] += 1
    return PairBreakdown(**counts)


@dataclass(frozen=True)
class UserMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    precision_defined: bool = True
    recall_defined: bool = True


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def user_metrics(predicted: Iterable[str], labels: Mapping[str, str]) -> UserMetrics:
    """User-level precision/recall of the coordinated class.

    Only labelled users count. An undefined ratio (empty denominator) is
    reported as 0 with its ``*_defined`` flag cleared.
    """
    predicted = {u for u in predicted if u in labels}
    truth = {u for u, lab in labels.items() if lab == COORDINATED}
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    p_def, r_def = tp + fp > 0, tp + fn > 0
    precision = tp / (tp + fp) if p_def else 0.0
    recall = tp / (tp + fn) if r_def else 0.0
    return UserMetrics(precision, recall, f1_score(precision, recall), tp, fp, fn, p_def, r_def)


# --- scores ----------------------------------------------------------------

def _passing(results) -> Iterable:
    for r in results:
        if r.slope > 0 and math.isfinite(r.rho_max):
            yield r


def user_scores(results, users: Iterable[str] = ()) -> dict[str, float]:
    """Highest ``rho_max`` over a user's incident results that pass the slope test."""
    scores = {u: NO_SCORE for u in users}
    for r in results:
        scores.setdefault(r.source, NO_SCORE)
        scores.setdefault(r.mapper, NO_SCORE)
    for r in _passing(results):
        for u in (r.source, r.mapper):
            scores[u] = max(scores[u], r.rho_max)
    return scores


def pair_scores(results) -> dict[tuple[str, str], float]:
    """Highest ``rho_max`` per unordered pair over slope-passing directions."""
    scores: dict[tuple[str, str], float] = {}
    for r in results:
        scores.setdefault(tuple(sorted((r.source, r.mapper))), NO_SCORE)
    for r in _passing(results):
        key = tuple(sorted((r.source, r.mapper)))
        scores[key] = max(scores[key], r.rho_max)
    return scores


def scores_from_matrix(rows: Iterable[tuple[str, str, float]], users: Iterable[str] = ()) -> tuple[dict, dict]:
    """``(user_scores, pair_scores)`` from external ``source, target, score`` triples."""
    per_user = {u: NO_SCORE for u in users}
    per_pair: dict[tuple[str, str], float] = {}
    for s, t, score in rows:
        if s == t or not math.isfinite(score):
            continue
        key = tuple(sorted((s, t)))
        per_pair[key] = max(per_pair.get(key, -math.inf), score)
        for u in key:
            per_user[u] = max(per_user.get(u, -math.inf), score)
    return per_user, per_pair


def read_score_matrix(path) -> list[tuple[str, str, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"source", "target", "score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: score matrix missing column(s) {sorted(missing)}")
        rows = []
        for i, row in enumerate(reader, 2):
            try:
                rows.append((row["source"], row["target"], float(row["score"])))
            except ValueError:
                raise ValueError(f"{path}:{i}: column 'score' is not numeric: {row['score']!r}") from None
        return rows


# --- ROC -------------------------------------------------------------------

@dataclass
class RocCurve:
    thresholds: list[float]
    fpr: list[float]
    tpr: list[float]
    auc: float
    youden_threshold: float
    youden_j: float

    def rows(self):
        return list(zip(self.thresholds, self.fpr, self.tpr))


def roc(scores: Mapping[str, float], labels: Mapping[str, str],
        threshold_grid: Optional[Sequence[float]] = None) -> RocCurve:
    """ROC over user scores; a user is positive at ``t`` when its score is ``>= t``.

    The default grid is the distinct scores plus 0 and 1. A leading
    ``+inf`` threshold anchors the curve at the origin, and a final
    threshold at or below the minimum score closes it at (1, 1).
    """
    users = [u for u in sorted(scores) if labels.get(u) in (COORDINATED, NORMAL)]
    y = np.array([labels[u] == COORDINATED for u in users])
    s = np.array([scores[u] for u in users], dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both coordinated and normal users")
    grid = set(np.unique(s).tolist()) | {0.0, 1.0}
    if threshold_grid is not None:
        grid = set(float(t) for t in threshold_grid) | {float(s.min())}
    thresholds = [math.inf] + sorted(grid, reverse=True)
    tpr, fpr = [], []
    for t in thresholds:
        hit = s >= t
        tpr.append(float((hit & y).sum() / n_pos))
        fpr.append(float((hit & ~y).sum() / n_neg))
    auc = float(_trapezoid(tpr, fpr))
    j = np.array(tpr) - np.array(fpr)
    best = int(np.argmax(j[1:])) + 1  # first (highest) threshold among ties
    return RocCurve(thresholds, fpr, tpr, auc, thresholds[best], float(j[best]))


# --- histograms and agreement ----------------------------------------------

@dataclass
class Histogram:
    edges: np.ndarray = field(default_factory=lambda: np.empty(0))
    counts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def score_histogram(scores: Iterable[float], bin_width: float = 0.005) -> Histogram:
    """Counts over ``[-1, 1]`` in bins of ``bin_width``; the top bin is closed."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values = np.array([v for v in scores if math.isfinite(v)], dtype=float)
    if values.size == 0:
        return Histogram()
    n_bins = int(math.ceil(2.0 / bin_width - 1e-9))
    idx = np.clip(np.floor((np.clip(values, -1.0, 1.0) + 1.0) / bin_width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    edges = -1.0 + bin_width * np.arange(n_bins + 1)
    edges[-1] = max(edges[-1], 1.0)
    return Histogram(edges, counts)


def semantic_agreement_curve(pair_score: Mapping[tuple[str, str], float],
                             agreement: Mapping[tuple[str, str], bool],
                             thresholds: Sequence[float]) -> list[tuple[float, float, int]]:
    """``(threshold, agreed share, n_detected)`` over pairs scoring at least the threshold.

    Thresholds with no detected pair are omitted.
    """
    agree = {tuple(sorted(k)): bool(v) for k, v in agreement.items()}
    curve = []
    for t in thresholds:
        hits = [p for p, sc in pair_score.items() if sc >= t]
        if not hits:
            continue
        missing = [p for p in hits if p not in agree]
        if missing:
            raise KeyError(f"no agreement label for pair {missing[0]}")
        curve.append((float(t), sum(agree[p] for p in hits) / len(hits), len(hits)))
    return curve


def label_agreement(pairs: Iterable[tuple[str, str]], user_label: Mapping[str, object]) -> dict[tuple[str, str], bool]:
    """Pairs agree when both users carry the same (non-missing) label, e.g. stance or topic."""
    out = {}
    for a, b in pairs:
        la, lb = user_label.get(a), user_label.get(b)
        out[tuple(sorted((a, b)))] = la is not None and la == lb
    return out


def metrics_report(predicted: Iterable[str], labels: Mapping[str, str], detected_pairs,
                   scores: Optional[Mapping[str, float]] = None) -> dict:
    predicted = set(predicted)
    report = {
        "n_users": len(labels),
        "n_marked": len(predicted),
        "breakdown": asdict(pair_breakdown(detected_pairs, labels)),
        "user_metrics": asdict(user_metrics(predicted, labels)),
    }
    if scores is not None:
        try:
            curve = roc(scores, labels)
            report["auc"] = curve.auc
            report["youden_threshold"] = curve.youden_threshold
            report["youden_j"] = curve.youden_j
        except ValueError as exc:
            report["auc"] = None
            report["roc_note"] = str(exc)
    return report
