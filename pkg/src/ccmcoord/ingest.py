"""Event log loading, windowing and user selection."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

logger = logging.getLogger(__name__)

COORDINATED = "coordinated"
NORMAL = "normal"
LABELS = (COORDINATED, NORMAL)

FIELDS = ("user_id", "timestamp", "text", "lang", "label")


class MalformedRow(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    user_id: str
    timestamp: int
    text: Optional[str] = None
    lang: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        if not self.user_id:
            raise MalformedRow("empty user_id")
        if self.timestamp < 0:
            raise MalformedRow(f"negative timestamp {self.timestamp}")
        if self.label is not None and self.label not in LABELS:
            raise MalformedRow(f"unknown label {self.label!r}")

    def to_dict(self) -> dict:
        row = {"user_id": self.user_id, "timestamp": self.timestamp}
        for key in ("text", "lang", "label"):
            value = getattr(self, key)
            if value is not None:
                row[key] = value
        return row


@dataclass(frozen=True)
class AnalysisWindow:
    """Half-open interval ``[t_start, t_end)`` in epoch seconds."""

    t_start: int
    t_end: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"empty window [{self.t_start}, {self.t_end})")

    @property
    def length(self) -> int:
        return self.t_end - self.t_start

    def __contains__(self, t: int) -> bool:
        return self.t_start <= t < self.t_end


@dataclass
class ActivityTrace:
    user_id: str
    timestamps: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.timestamps)


def _parse_timestamp(raw) -> int:
    if isinstance(raw, bool) or raw is None:
        raise MalformedRow(f"bad timestamp {raw!r}")
    if isinstance(raw, (int, float)):
        value = raw
    else:
        try:
            value = float(str(raw).strip())
        except ValueError:
            raise MalformedRow(f"non-numeric timestamp {raw!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise MalformedRow(f"non-finite timestamp {raw!r}")
    # sub-second precision is truncated
    return int(math.floor(value))


def _optional(raw) -> Optional[str]:
    if raw is None:
        return None
    if not isinstance(raw, str):
        raise MalformedRow(f"expected string, got {raw!r}")
    return raw if raw != "" else None


def _event_from_mapping(row: Mapping) -> Event:
    user = row.get("user_id")
    if not isinstance(user, str) or not user:
        raise MalformedRow(f"bad user_id {user!r}")
    return Event(
        user_id=user,
        timestamp=_parse_timestamp(row.get("timestamp")),
        text=_optional(row.get("text")),
        lang=_optional(row.get("lang")),
        label=_optional(row.get("label")),
    )


def _iter_jsonl(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, MalformedRow(f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                yield lineno, MalformedRow("row is not an object")
                continue
            yield lineno, obj


def _iter_csv(path: Path):
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        if "user_id" not in header or "timestamp" not in header:
            raise ValueError(f"{path}: CSV header must contain user_id and timestamp, got {header}")
        for lineno, values in enumerate(reader, 2):
            if not values:
                continue
            if len(values) != len(header):
                yield lineno, MalformedRow(f"expected {len(header)} fields, got {len(values)}")
                continue
            yield lineno, dict(zip(header, values))


def load_events(path, fmt: Optional[str] = None) -> tuple[list[Event], int]:
    """Read an event log, returning ``(events, n_skipped)``.

    ``fmt`` is ``"jsonl"`` or ``"csv"``; when omitted it is taken from the
    file suffix. Malformed rows are logged and skipped rather than raised.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown event format {fmt!r}")
    rows = _iter_csv(path) if fmt == "csv" else _iter_jsonl(path)

    events: list[Event] = []
    skipped = 0
    for lineno, row in rows:
        try:
            if isinstance(row, MalformedRow):
                raise row
            events.append(_event_from_mapping(row))
        except MalformedRow as exc:
            skipped += 1
            logger.warning("%s:%d: skipping malformed row (%s)", path, lineno, exc)
    if skipped:
        logger.warning("%s: skipped %d malformed row(s)", path, skipped)
    return events, skipped


def write_events_jsonl(events: Iterable[Event], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def build_traces(events: Iterable[Event], window: AnalysisWindow) -> dict[str, ActivityTrace]:
    grouped: dict[str, list[int]] = defaultdict(list)
    for ev in events:
        if ev.timestamp in window:
            grouped[ev.user_id].append(ev.timestamp)
    return {u: ActivityTrace(u, sorted(ts)) for u, ts in sorted(grouped.items())}


def user_labels(events: Iterable[Event]) -> dict[str, str]:
    """First label seen per user; conflicting later labels are logged."""
    labels: dict[str, str] = {}
    for ev in events:
        if ev.label is None:
            continue
        seen = labels.setdefault(ev.user_id, ev.label)
        if seen != ev.label:
            logger.warning("user %s has conflicting labels; keeping %r", ev.user_id, seen)
    return labels


def data_window(events: Iterable[Event]) -> AnalysisWindow:
    """Smallest window covering every event."""
    stamps = [ev.timestamp for ev in events]
    if not stamps:
        raise ValueError("no events to derive a window from")
    return AnalysisWindow(min(stamps), max(stamps) + 1)


def _most_active(counts: Mapping[str, int], users: Iterable[str], n: int) -> list[str]:
    ranked = sorted(users, key=lambda u: (-counts[u], u))
    return ranked[:n]


def select_top_users(
    traces: Mapping[str, ActivityTrace],
    n_coordinated: int,
    n_normal: int,
    labels: Optional[Mapping[str, str]] = None,
) -> list[str]:
    """Most active coordinated users followed by the most active normal users.

    Activity is the number of in-window events; ties go to the
    lexicographically smaller user id. Without labels the
    ``n_coordinated + n_normal`` most active users are returned.
    """
    counts = Counter({u: len(tr) for u, tr in traces.items()})
    if not labels:
        want = n_coordinated + n_normal
        chosen = _most_active(counts, traces, want)
        if len(chosen) < want:
            logger.warning("requested %d users, only %d available", want, len(chosen))
        return chosen

    chosen = []
    for label, n in ((COORDINATED, n_coordinated), (NORMAL, n_normal)):
        pool = [u for u in traces if labels.get(u) == label]
        top = _most_active(counts, pool, n)
        if len(top) < n:
            logger.warning("requested %d %s users, only %d available", n, label, len(top))
        chosen.extend(top)
    return chosen
