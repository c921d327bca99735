"""Convergent cross mapping between user activity series.

For an ordered pair ``(source, mapper)`` the mapper's shadow manifold is
used to predict the source's counts on the held-out test segment. If the
prediction skill grows with the library length and peaks above ``theta``,
the source is taken to drive the mapper (``source => mapper``).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .series import DEFAULT_TRAIN_RATIO, BinnedSeries, Ratio, train_length

logger = logging.getLogger(__name__)

DEFAULT_E = 10
DEFAULT_TAU = 1
DEFAULT_THETA = 0.5
DEFAULT_N_LIBRARIES = 10


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingParams:
    E: int = DEFAULT_E
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if self.E <= 1:
            raise ValueError(f"embedding dimension must exceed 1, got {self.E}")
        if self.tau < 1:
            raise ValueError(f"lag must be at least 1, got {self.tau}")

    @property
    def k(self) -> int:
        return self.E + 1

    @property
    def span(self) -> int:
        """Index of the first time with a complete lag vector."""
        return (self.E - 1) * self.tau


@dataclass(frozen=True)
class ShadowManifold:
    user_id: str
    points: np.ndarray  # (n, E), newest coordinate first
    times: np.ndarray  # time index (into the embedded series) of each point
    params: EmbeddingParams

    def __len__(self) -> int:
        return len(self.points)


def lag_vectors(values: np.ndarray, times: np.ndarray, params: EmbeddingParams) -> np.ndarray:
    """Rows ``<x(t), x(t - tau), ..., x(t - (E-1) tau)>`` for each ``t``."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=np.int64)
    if times.size and times.min() < params.span:
        raise EmbeddingError("insufficient history for embedding")
    lags = np.arange(params.E) * params.tau
    return values[times[:, None] - lags[None, :]]


def embed(values, params: EmbeddingParams, user_id: str = "") -> ShadowManifold:
    values = np.asarray(values, dtype=float)
    if len(values) < params.span + 2:
        raise EmbeddingError(
            f"insufficient history for embedding: {len(values)} bins, need {params.span + 2}"
        )
    times = np.arange(params.span, len(values))
    return ShadowManifold(user_id, lag_vectors(values, times, params), times, params)


def simplex_weights(distances: np.ndarray) -> np.ndarray:
    """``exp(-d / d_min)`` normalised per row.

    Rows are sorted ascending so column 0 holds ``d_min``. A row with
    ``d_min == 0`` weights its exact matches uniformly.
    """
    distances = np.atleast_2d(distances)
    d_min = distances[:, :1]
    exact = d_min[:, 0] == 0
    w = np.empty_like(distances, dtype=float)
    safe = np.where(exact[:, None], 1.0, d_min)
    w[~exact] = np.exp(-distances[~exact] / safe[~exact])
    w[exact] = (distances[exact] == 0).astype(float)
    return w / w.sum(axis=1, keepdims=True)


def nearest_neighbours(library: np.ndarray, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean kNN; equal distances resolve to the lower library index."""
    if len(library) < k:
        raise EmbeddingError(f"library of {len(library)} points is smaller than k={k}")
    d2 = cdist(np.atleast_2d(queries), library, "sqeuclidean")
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return order, np.sqrt(np.take_along_axis(d2, order, axis=1))


def _check_library(manifold: ShadowManifold, library_length: int, query_times: np.ndarray) -> None:
    if library_length > len(manifold):
        raise EmbeddingError(f"library length {library_length} exceeds manifold size {len(manifold)}")
    if library_length < manifold.params.k:
        raise EmbeddingError(f"library length {library_length} is below k={manifold.params.k}")
    if query_times.size and manifold.times[library_length - 1] >= query_times.min():
        raise EmbeddingError("library points must precede every query time")


def cross_map_predict(
    target,
    mapper_manifold: ShadowManifold,
    library_length: int,
    query_times,
    mapper_values,
) -> np.ndarray:
    """Predict ``target`` at ``query_times`` from the mapper's reconstructed states.

    Query states are lag vectors of ``mapper_values`` (the mapper's full
    series) at each query time; they may reach back into the library
    period. The library is the first ``library_length`` manifold points.
    """
    params = mapper_manifold.params
    target = np.asarray(target, dtype=float)
    query_times = np.asarray(query_times, dtype=np.int64)
    _check_library(mapper_manifold, library_length, query_times)
    queries = lag_vectors(mapper_values, query_times, params)
    idx, dist = nearest_neighbours(mapper_manifold.points[:library_length], queries, params.k)
    w = simplex_weights(dist)
    return (target[mapper_manifold.times[idx]] * w).sum(axis=1)


def pearson(x, y) -> float:
    """Two-pass Pearson correlation; ``nan`` when either input is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    if not denom > 0:  # variance lost to underflow
        return float("nan")
    return min(1.0, max(-1.0, float(np.dot(dx, dy) / denom)))


def ols_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x - x.mean()
    return float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))


def default_library_schedule(n_library: int, params: EmbeddingParams, n_lengths: int = DEFAULT_N_LIBRARIES) -> list[int]:
    """Linearly spaced library lengths ending at the full train manifold."""
    low = max(2 * params.k, params.span + params.E + 2)
    if n_library < low:
        raise EmbeddingError(f"train manifold of {n_library} points is shorter than minimum library {low}")
    lengths = np.unique(np.round(np.linspace(low, n_library, n_lengths)).astype(int))
    return lengths.tolist()


def decide(slope: float, rho_max: float, theta: float) -> bool:
    return bool(slope > 0 and rho_max >= theta)


@dataclass(frozen=True)
class CrossMapResult:
    source: str
    mapper: str
    library_lengths: tuple[int, ...]
    rhos: tuple[float, ...]
    slope: float
    rho_max: float
    decision: bool
    note: Optional[str] = None

    @property
    def rho_by_library(self) -> list[tuple[int, float]]:
        return list(zip(self.library_lengths, self.rhos))

    @property
    def pair(self) -> tuple[str, str]:
        return tuple(sorted((self.source, self.mapper)))


def summarize(source: str, mapper: str, lengths: Sequence[int], rhos: Sequence[float], theta: float) -> CrossMapResult:
    lengths = tuple(int(n) for n in lengths)
    rhos = tuple(float(r) for r in rhos)
    valid = [(n, r) for n, r in zip(lengths, rhos) if not np.isnan(r)]
    if len(valid) < 2:
        rho_max = max((r for _, r in valid), default=float("nan"))
        return CrossMapResult(source, mapper, lengths, rhos, float("nan"), rho_max, False,
                              "insufficient valid correlations")
    ls, rs = zip(*valid)
    slope = ols_slope(ls, rs)
    rho_max = max(rs)
    return CrossMapResult(source, mapper, lengths, rhos, slope, rho_max, decide(slope, rho_max, theta))


def failed_result(source: str, mapper: str, note: str) -> CrossMapResult:
    nan = float("nan")
    return CrossMapResult(source, mapper, (), (), nan, nan, False, note)


class CrossMapper:
    """Neighbour tables of one user's manifold for every library length.

    The tables depend only on the mapper, so a user's tables are built once
    and reused for every partner it cross-maps. Predictions for a partner
    are then a weighted gather over the partner's series.
    """

    def __init__(self, series: BinnedSeries, params: EmbeddingParams, schedule: Sequence[int],
                 train_ratio: Ratio = DEFAULT_TRAIN_RATIO):
        values = np.asarray(series.values, dtype=float)
        n_train = train_length(len(values), train_ratio)
        self.user_id = series.user_id
        self.params = params
        self.schedule = [int(n) for n in schedule]
        self.manifold = embed(values[:n_train], params, series.user_id)
        self.query_times = np.arange(n_train, len(values))
        if self.query_times.size < 2:
            raise EmbeddingError("test segment needs at least two bins")
        for n in self.schedule:
            _check_library(self.manifold, n, self.query_times)

        queries = lag_vectors(values, self.query_times, params)
        full_lib = self.manifold.points[: max(self.schedule)]
        d2 = cdist(queries, full_lib, "sqeuclidean")
        order = np.argsort(d2, axis=1, kind="stable")
        k = params.k
        self.neighbour_times = []
        self.weights = []
        for n in self.schedule:
            inside = order < n
            keep = inside & (np.cumsum(inside, axis=1) <= k)
            idx = order[keep].reshape(len(queries), k)
            dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
            self.neighbour_times.append(self.manifold.times[idx])
            self.weights.append(simplex_weights(dist))

    def predict(self, target) -> np.ndarray:
        """Predictions of ``target`` at the test times, one row per library length."""
        target = np.asarray(target, dtype=float)
        return np.stack([(target[t] * w).sum(axis=1) for t, w in zip(self.neighbour_times, self.weights)])

    def cross_map(self, source: BinnedSeries, theta: float = DEFAULT_THETA) -> CrossMapResult:
        """Skill of this manifold at recovering ``source``; decides ``source => self``."""
        target = np.asarray(source.values, dtype=float)
        truth = target[self.query_times]
        rhos = [pearson(p, truth) for p in self.predict(target)]
        return summarize(source.user_id, self.user_id, self.schedule, rhos, theta)


def _schedule_for(series: BinnedSeries, params: EmbeddingParams, train_ratio: Ratio) -> list[int]:
    n_train = train_length(len(series.values), train_ratio)
    return default_library_schedule(n_train - params.span, params)


def ccm_pair(
    u1: BinnedSeries,
    u2: BinnedSeries,
    params: EmbeddingParams = EmbeddingParams(),
    schedule: Optional[Sequence[int]] = None,
    theta: float = DEFAULT_THETA,
    train_ratio: Ratio = DEFAULT_TRAIN_RATIO,
) -> tuple[CrossMapResult, CrossMapResult]:
    """Cross map both ways: ``(u1 => u2, u2 => u1)``.

    The first result predicts ``u1`` from ``u2``'s manifold.
    """
    if len(u1.values) != len(u2.values):
        raise ValueError("series lengths differ")
    if schedule is None:
        schedule = _schedule_for(u1, params, train_ratio)
    m1 = CrossMapper(u1, params, schedule, train_ratio)
    m2 = CrossMapper(u2, params, schedule, train_ratio)
    return m2.cross_map(u1, theta), m1.cross_map(u2, theta)


def all_pairs(user_ids: Iterable[str]) -> list[tuple[str, str]]:
    return list(combinations(sorted(set(user_ids)), 2))


def pairwise_scan(
    users: Sequence[BinnedSeries],
    params: EmbeddingParams = EmbeddingParams(),
    schedule: Optional[Sequence[int]] = None,
    theta: float = DEFAULT_THETA,
    pair_filter: Optional[Iterable[tuple[str, str]]] = None,
    train_ratio: Ratio = DEFAULT_TRAIN_RATIO,
    n_jobs: int = 1,
) -> list[CrossMapResult]:
    """Run :func:`ccm_pair` over every unordered pair (or the filtered ones).

    Results come back sorted by user-id pair, ``(a => b)`` before
    ``(b => a)`` for ``a < b``. Users whose series cannot be embedded yield
    failed results instead of aborting the scan.
    """
    if len(users) < 2:
        raise ValueError("pairwise scan needs at least two users")
    by_id = {s.user_id: s for s in users}
    if len(by_id) != len(users):
        raise ValueError("duplicate user ids in scan")
    if pair_filter is None:
        pairs = all_pairs(by_id)
    else:
        pairs = sorted({tuple(sorted(p)) for p in pair_filter if p[0] != p[1]})
        missing = {u for p in pairs for u in p} - by_id.keys()
        if missing:
            raise KeyError(f"pair filter names unknown users: {sorted(missing)[:5]}")
    if schedule is None:
        schedule = _schedule_for(users[0], params, train_ratio)

    needed = sorted({u for p in pairs for u in p})
    mappers: dict[str, CrossMapper] = {}
    errors: dict[str, str] = {}

    def build(uid):
        try:
            return uid, CrossMapper(by_id[uid], params, schedule, train_ratio), None
        except EmbeddingError as exc:
            return uid, None, str(exc)

    def run(pair):
        a, b = pair
        if a in errors or b in errors:
            note = errors.get(a) or errors.get(b)
            return [failed_result(a, b, note), failed_result(b, a, note)]
        return [mappers[b].cross_map(by_id[a], theta), mappers[a].cross_map(by_id[b], theta)]

    with ThreadPoolExecutor(max_workers=max(1, n_jobs)) as pool:
        for uid, mapper, err in pool.map(build, needed):
            if err is not None:
                logger.warning("user %s cannot be embedded: %s", uid, err)
                errors[uid] = err
            else:
                mappers[uid] = mapper
        chunks = list(pool.map(run, pairs))
    return [r for chunk in chunks for r in chunk]
