"""Binning of activity traces into fixed-length count vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .ingest import ActivityTrace, AnalysisWindow

DEFAULT_BIN_WIDTH = 3600
DEFAULT_TRAIN_RATIO = Fraction(3, 4)

Ratio = Union[Fraction, float, str]


@dataclass(frozen=True)
class BinnedSeries:
    user_id: str
    values: np.ndarray
    bin_width: int
    window: AnalysisWindow

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SplitSeries:
    train: np.ndarray
    test: np.ndarray
    split_ratio: Fraction


def n_bins(window: AnalysisWindow, bin_width: int) -> int:
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    length = window.length // bin_width
    if length < 1:
        raise ValueError(f"bin width {bin_width}s exceeds window length {window.length}s")
    return length


def bin_trace(trace: ActivityTrace, window: AnalysisWindow, bin_width: int = DEFAULT_BIN_WIDTH) -> BinnedSeries:
    """Count events per bin; bin ``a`` covers ``[t_start + a*I, t_start + (a+1)*I)``.

    The trailing partial bin is dropped.
    """
    length = n_bins(window, bin_width)
    stamps = np.asarray(trace.timestamps, dtype=np.int64)
    offsets = stamps - window.t_start
    idx = offsets[(offsets >= 0) & (stamps < window.t_end)] // bin_width
    idx = idx[idx < length]
    values = np.bincount(idx, minlength=length).astype(np.int64)
    return BinnedSeries(trace.user_id, values, bin_width, window)


def bin_traces(traces, users: Sequence[str], window: AnalysisWindow, bin_width: int = DEFAULT_BIN_WIDTH) -> list[BinnedSeries]:
    return [bin_trace(traces.get(u) or ActivityTrace(u), window, bin_width) for u in users]


def parse_ratio(ratio: Ratio) -> Fraction:
    """Accept ``3/4``, ``0.75`` or the ``3:1`` train:test notation."""
    if isinstance(ratio, str) and ":" in ratio:
        a, b = (Fraction(p) for p in ratio.split(":"))
        if a <= 0 or b <= 0:
            raise ValueError(f"bad split ratio {ratio!r}")
        ratio = a / (a + b)
    ratio = Fraction(ratio).limit_denominator(10**6) if isinstance(ratio, float) else Fraction(ratio)
    if not 0 < ratio < 1:
        raise ValueError(f"train ratio must lie in (0, 1), got {ratio}")
    return ratio


def train_length(length: int, ratio: Ratio = DEFAULT_TRAIN_RATIO) -> int:
    return int(parse_ratio(ratio) * length)  # floor, ratio is positive


def split(series: BinnedSeries, ratio: Ratio = DEFAULT_TRAIN_RATIO) -> SplitSeries:
    """Chronological split: the train prefix is followed by the test suffix."""
    frac = parse_ratio(ratio)
    n_train = train_length(len(series.values), frac)
    return SplitSeries(series.values[:n_train], series.values[n_train:], frac)


def write_matrix_csv(series: Sequence[BinnedSeries], path) -> None:
    """Rows are users, columns are bins."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        width = len(series[0].values) if series else 0
        writer.writerow(["user_id"] + [f"b{i}" for i in range(width)])
        for s in series:
            writer.writerow([s.user_id] + s.values.tolist())
