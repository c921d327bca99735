"""Comparison detectors: pairwise Granger causality and a majority-language rule."""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .ccm import DEFAULT_E, CrossMapResult

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
DEFAULT_MAX_LAG = DEFAULT_E


@dataclass(frozen=True)
class GcResult:
    """Does ``cause`` help predict ``effect`` beyond ``effect``'s own past?"""

    cause: str
    effect: str
    f_stat: float
    p_value: float
    max_lag: int
    alpha: float
    decision: bool
    note: Optional[str] = None

    def as_edge(self) -> CrossMapResult:
        """Shared edge schema: ``rho_max`` carries ``1 - p`` and ``slope`` the F statistic."""
        score = 1.0 - self.p_value if np.isfinite(self.p_value) else float("nan")
        return CrossMapResult(self.cause, self.effect, (), (), self.f_stat, score, self.decision, self.note)


def _lagmat(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = len(x)
    return np.column_stack([x[max_lag - j: n - j] for j in range(1, max_lag + 1)])


def granger_f_test(cause, effect, max_lag: int = DEFAULT_MAX_LAG) -> tuple[float, float, Optional[str]]:
    """F test of the exclusion of ``cause`` lags from an ADL(max_lag) model of ``effect``.

    Returns ``(F, p_value, note)``; degenerate designs give ``nan`` values and a note.
    """
    x = np.asarray(cause, dtype=float)
    y = np.asarray(effect, dtype=float)
    if len(x) != len(y):
        raise ValueError("series lengths differ")
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if len(y) <= 3 * max_lag + 1:
        raise ValueError(f"series of length {len(y)} too short for max_lag={max_lag}")
    target = y[max_lag:]
    nobs = len(target)
    ones = np.ones((nobs, 1))
    restricted = np.hstack([ones, _lagmat(y, max_lag)])
    full = np.hstack([restricted, _lagmat(x, max_lag)])
    if np.linalg.matrix_rank(full) < full.shape[1]:
        return float("nan"), float("nan"), "singular design matrix"
    rss = []
    for design in (restricted, full):
        beta, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ beta
        rss.append(float(resid @ resid))
    rss_r, rss_u = rss
    df_den = nobs - full.shape[1]
    if rss_u <= 0 or df_den <= 0:
        return float("nan"), float("nan"), "degenerate residuals"
    f_stat = max(((rss_r - rss_u) / max_lag) / (rss_u / df_den), 0.0)
    return f_stat, float(stats.f.sf(f_stat, max_lag, df_den)), None


def granger_direction(cause_id: str, cause, effect_id: str, effect, max_lag: int = DEFAULT_MAX_LAG,
                      alpha: float = DEFAULT_ALPHA) -> GcResult:
    f_stat, p, note = granger_f_test(cause, effect, max_lag)
    decision = bool(note is None and p < alpha)
    return GcResult(cause_id, effect_id, f_stat, p, max_lag, alpha, decision, note)


def granger_pair(u1, u2, max_lag: int = DEFAULT_MAX_LAG, alpha: float = DEFAULT_ALPHA) -> tuple[GcResult, GcResult]:
    """``(u1 => u2, u2 => u1)`` for two binned series."""
    return (
        granger_direction(u1.user_id, u1.values, u2.user_id, u2.values, max_lag, alpha),
        granger_direction(u2.user_id, u2.values, u1.user_id, u1.values, max_lag, alpha),
    )


def granger_scan(users: Sequence, max_lag: int = DEFAULT_MAX_LAG, alpha: float = DEFAULT_ALPHA,
                 pair_filter: Optional[Iterable[tuple[str, str]]] = None, n_jobs: int = 1) -> list[GcResult]:
    by_id = {s.user_id: s for s in users}
    if pair_filter is None:
        pairs = list(combinations(sorted(by_id), 2))
    else:
        pairs = sorted({tuple(sorted(p)) for p in pair_filter if p[0] != p[1]})
    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
        chunks = pool.map(lambda p: granger_pair(by_id[p[0]], by_id[p[1]], max_lag, alpha), pairs)
        return [r for pair in chunks for r in pair]


@dataclass(frozen=True)
class LanguageDecision:
    user_id: str
    coordinated: bool
    share: float  # fraction of the user's tagged events in the flagged language
    note: Optional[str] = None


def language_counts(events) -> dict[str, Counter]:
    counts: dict[str, Counter] = {}
    for ev in events:
        c = counts.setdefault(ev.user_id, Counter())
        if ev.lang:
            c[ev.lang.lower()] += 1
    return counts


def language_classifier(counts: Mapping[str, Mapping[str, int]], coordinated_lang: str = "ru") -> dict[str, LanguageDecision]:
    """Flag users whose most frequent language is ``coordinated_lang``.

    The flagged language must outnumber every other language; a tie leaves
    the user normal.
    """
    lang = coordinated_lang.lower()
    out = {}
    for user in sorted(counts):
        c = counts[user]
        total = sum(c.values())
        if total == 0:
            out[user] = LanguageDecision(user, False, 0.0, "no language metadata")
            continue
        hits = c.get(lang, 0)
        rival = max((v for k, v in c.items() if k != lang), default=0)
        out[user] = LanguageDecision(user, hits > rival, hits / total)
    return out
