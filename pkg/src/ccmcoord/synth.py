"""Synthetic leader/follower activity with known causal ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ingest import COORDINATED, NORMAL, ActivityTrace, Event

KINDS = ("regular_leader", "irregular_leader", "irregular_leader_noisy_follower", "independent_random")

HOUR = 3600
DAY = 86400


@dataclass(frozen=True)
class FollowLag:
    """Reaction delay in whole bins: ``bins`` plus a uniform extra in ``[0, jitter]``.

    Inside the landing bin the follower always posts after the leader's
    within-bin offset, so the reaction never precedes its trigger.
    """

    bins: int = 0
    jitter: int = 0

    def __post_init__(self):
        if self.bins < 0 or self.jitter < 0:
            raise ValueError("follow lag must be non-negative")

    @property
    def max_bins(self) -> int:
        return self.bins + self.jitter


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    duration: int = 60 * DAY
    leader_rate: float = 0.5  # events per hour
    follow_lag: FollowLag = field(default_factory=FollowLag)
    noise_rate: float = 0.0  # independent follower events per hour
    seed: int = 0
    bin_width: int = HOUR
    leader_jitter: float = 0.0  # regular leader only: uniform +/- seconds around the grid
    start: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.leader_rate < 0 or self.noise_rate < 0 or self.leader_jitter < 0:
            raise ValueError("rates must be non-negative")
        if (self.follow_lag.max_bins + 1) * self.bin_width >= self.duration:
            raise ValueError("follow lag leaves no room for leader events in the duration")
        if self.kind == "regular_leader" and self.leader_rate == 0:
            raise ValueError("regular leader needs a positive rate")


def poisson_times(rng: np.random.Generator, rate_per_hour: float, t0: float, t1: float) -> np.ndarray:
    """Homogeneous Poisson event times on ``[t0, t1)``, sorted, integer seconds."""
    if t1 <= t0 or rate_per_hour == 0:
        return np.empty(0, dtype=np.int64)
    n = rng.poisson(rate_per_hour * (t1 - t0) / HOUR)
    return np.sort(np.floor(rng.uniform(t0, t1, n)).astype(np.int64))


def regular_times(rng: np.random.Generator, rate_per_hour: float, t0: float, t1: float, jitter: float = 0.0) -> np.ndarray:
    interval = HOUR / rate_per_hour
    grid = np.arange(t0 + rng.uniform(0, interval), t1, interval)
    if jitter:
        grid = grid + rng.uniform(-jitter, jitter, len(grid))
        grid = grid[(grid >= t0) & (grid < t1)]
    return np.sort(np.floor(grid).astype(np.int64))


def follow(rng: np.random.Generator, leader: np.ndarray, lag: FollowLag, bin_width: int, origin: int = 0) -> np.ndarray:
    """One reaction per leader event, landing ``lag`` bins later."""
    if leader.size == 0:
        return leader.copy()
    shift = lag.bins + rng.integers(0, lag.jitter + 1, leader.size)
    within = (leader - origin) % bin_width
    offset = np.floor(rng.uniform(within, bin_width)).astype(np.int64)
    return np.sort(leader - within + shift * bin_width + offset)


def _leader(rng, spec: ScenarioSpec) -> np.ndarray:
    # leave room so every reaction stays inside the window
    t1 = spec.start + spec.duration - (spec.follow_lag.max_bins + 1) * spec.bin_width
    if spec.kind == "regular_leader":
        return regular_times(rng, spec.leader_rate, spec.start, t1, spec.leader_jitter)
    return poisson_times(rng, spec.leader_rate, spec.start, t1)


def _simulate(rng: np.random.Generator, spec: ScenarioSpec, n_followers: int):
    end = spec.start + spec.duration
    if spec.kind == "independent_random":
        users = [poisson_times(rng, spec.leader_rate, spec.start, end) for _ in range(n_followers + 1)]
        return users[0], users[1:]
    leader = _leader(rng, spec)
    followers = []
    for _ in range(n_followers):
        f = follow(rng, leader, spec.follow_lag, spec.bin_width, spec.start)
        if spec.kind == "irregular_leader_noisy_follower" and spec.noise_rate > 0:
            f = np.sort(np.concatenate([f, poisson_times(rng, spec.noise_rate, spec.start, end)]))
        followers.append(f)
    return leader, followers


def simulate_pair(spec: ScenarioSpec, names: tuple[str, str] = ("u1", "u2")):
    """Return ``(leader_trace, follower_trace, ground_truth_edges)``."""
    rng = np.random.default_rng(spec.seed)
    leader, (follower,) = _simulate(rng, spec, 1)
    truth = set() if spec.kind == "independent_random" else {names}
    return ActivityTrace(names[0], leader.tolist()), ActivityTrace(names[1], follower.tolist()), truth


@dataclass
class Population:
    events: list[Event]
    labels: dict[str, str]
    edges: list[tuple[str, str]]
    groups: dict[str, int]  # user -> group index; normal users get -1

    def traces(self) -> dict[str, ActivityTrace]:
        out: dict[str, list[int]] = {u: [] for u in self.labels}
        for ev in self.events:
            out[ev.user_id].append(ev.timestamp)
        return {u: ActivityTrace(u, sorted(ts)) for u, ts in out.items()}


def topic_vocabularies(n_topics: int, words_per_topic: int = 30) -> list[list[str]]:
    """Disjoint synthetic term blocks, one per topic."""
    return [[f"t{t}w{i:02d}" for i in range(words_per_topic)] for t in range(n_topics)]


def _texts(rng, vocab: Sequence[str], n: int, words: int = 6) -> list[str]:
    picks = rng.integers(0, len(vocab), size=(n, words))
    return [" ".join(vocab[j] for j in row) for row in picks]


def simulate_population(
    n_groups: int,
    group_size: int,
    normal_users: int,
    template: ScenarioSpec,
    seed: int = 0,
    normal_rate: Optional[float] = None,
    vocabularies: Optional[Sequence[Sequence[str]]] = None,
) -> Population:
    """Groups of one leader plus ``group_size - 1`` followers, and independent normal users.

    With ``vocabularies``, every event carries text drawn from a topic
    block: group ``g`` talks about topic ``g mod n_topics`` and normal user
    ``i`` about topic ``i mod n_topics``.
    """
    if min(n_groups, group_size, normal_users) < 0:
        raise ValueError("population sizes must be non-negative")
    root = np.random.SeedSequence(seed)
    group_seqs = root.spawn(n_groups + 1)
    normal_seq = group_seqs.pop()
    rate = template.leader_rate if normal_rate is None else normal_rate
    end = template.start + template.duration
    width = max(2, len(str(max(n_groups, normal_users, group_size))))

    stamps: dict[str, np.ndarray] = {}
    topic_of: dict[str, int] = {}
    labels: dict[str, str] = {}
    groups: dict[str, int] = {}
    edges: list[tuple[str, str]] = []
    for g, seq in enumerate(group_seqs):
        rng = np.random.default_rng(seq)
        leader, followers = _simulate(rng, template, max(group_size - 1, 0))
        members = [f"g{g:0{width}d}_{m:0{width}d}" for m in range(group_size)]
        for uid, ts in zip(members, [leader] + followers):
            stamps[uid] = ts
            labels[uid] = COORDINATED
            groups[uid] = g
            topic_of[uid] = g
        if template.kind != "independent_random":
            edges.extend((members[0], f) for f in members[1:])

    rng = np.random.default_rng(normal_seq)
    for i in range(normal_users):
        uid = f"n{i:0{width + 1}d}"
        stamps[uid] = poisson_times(rng, rate, template.start, end)
        labels[uid] = NORMAL
        groups[uid] = -1
        topic_of[uid] = i

    text_rng = np.random.default_rng(root.spawn(1)[0])
    events = []
    for uid in sorted(stamps):
        ts = stamps[uid]
        texts = [None] * len(ts)
        if vocabularies:
            texts = _texts(text_rng, vocabularies[topic_of[uid] % len(vocabularies)], len(ts))
        events.extend(Event(uid, int(t), text, None, labels[uid]) for t, text in zip(ts, texts))
    events.sort(key=lambda e: (e.timestamp, e.user_id))
    return Population(events, labels, edges, groups)


def write_edges_csv(edges, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "target"])
        writer.writerows(sorted(edges))


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
