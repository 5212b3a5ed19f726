"""Observation-series ingestion, validation, and initial-state construction.

The observed series is bi-daily adult counts y_1..y_T at day-stamps
t_k = 2k.  The first eight observations fix the initial delay buffer;
the likelihood is computed on y_9..y_T.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np
from scipy.interpolate import CubicSpline

from blowpomp.core import DelayState
from blowpomp.errors import (
    IndivisibleLag,
    MalformedRow,
    MissingFile,
    NegativeCount,
    NonUniformSpacing,
    WindowTooShort,
)

__all__ = [
    "InitWindow",
    "ObservationSeries",
    "initial_state",
    "load_series",
]

OBS_SPACING_DAYS = 2.0
INIT_WINDOW_LEN = 8


@dataclasses.dataclass
class ObservationSeries:
    """Validated bi-daily count series."""

    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.times.shape != self.counts.shape or self.times.ndim != 1:
            raise ValueError("times and counts must be 1-D and aligned")
        gaps = np.diff(self.times)
        if np.any(gaps != OBS_SPACING_DAYS):
            raise NonUniformSpacing(f"observation spacing must be {OBS_SPACING_DAYS} days")
        if np.any(self.counts < 0):
            raise NegativeCount("counts must be >= 0")
        if len(self.times) < INIT_WINDOW_LEN + 1:
            raise ValueError(f"need at least {INIT_WINDOW_LEN + 1} observations, got {len(self.times)}")

    def __len__(self):
        return len(self.times)

    def window(self, first_k, last_k=None):
        """Sub-series from observation index first_k to last_k, 1-based inclusive."""
        t = len(self)
        last_k = t if last_k is None else last_k
        if not 1 <= first_k <= last_k <= t:
            raise ValueError(f"window [{first_k}, {last_k}] out of range 1..{t}")
        return ObservationSeries(self.times[first_k - 1 : last_k], self.counts[first_k - 1 : last_k])

    def init_window(self):
        """The eight observations that pin down the initial delay state."""
        k = INIT_WINDOW_LEN
        return InitWindow(
            anchor_time=float(self.times[k - 1]),
            times=self.times[:k].copy(),
            counts=self.counts[:k].copy(),
        )


@dataclasses.dataclass
class InitWindow:
    """First eight (t_k, y_k) pairs; anchor_time is t_8."""

    anchor_time: float
    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.times) != INIT_WINDOW_LEN or len(self.counts) != INIT_WINDOW_LEN:
            raise ValueError(f"init window must hold exactly {INIT_WINDOW_LEN} observations")
        if self.anchor_time != self.times[-1]:
            raise ValueError("anchor_time must equal the last window time")


def load_series(path, fmt="csv"):
    """Load and validate a `day,count` CSV into an ObservationSeries."""
    if fmt != "csv":
        raise ValueError(f"unsupported format {fmt!r}")
    if not os.path.isfile(path):
        raise MissingFile(f"no such file: {path}")
    times = []
    counts = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "day,count":
            raise MalformedRow(1, f"expected header 'day,count', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise MalformedRow(lineno, f"expected 2 fields, got {len(parts)}")
            try:
                day = int(parts[0])
                count = int(parts[1])
            except ValueError:
                raise MalformedRow(lineno, f"non-integer field in {line!r}") from None
            times.append(day)
            counts.append(count)
    if any(counts[i] < 0 for i in range(len(counts))):
        raise NegativeCount("counts must be >= 0")
    return ObservationSeries(np.array(times, dtype=float), np.array(counts, dtype=np.int64))


def initial_state(window, delta, tau):
    """Delay state at the window anchor, (N(t8), N(t8-delta), ..., N(t8-tau)).

    For delta equal to the observation spacing the buffer is exactly
    the reversed window counts, no interpolation.  Otherwise a natural
    cubic spline through the eight points is evaluated at the lag
    times, rounded half-up, and clamped at zero.
    """
    ratio = tau / delta
    if abs(ratio - round(ratio)) > 1e-9:
        raise IndivisibleLag(f"delta={delta} does not divide tau={tau}")
    n_lags = round(ratio) + 1
    lag_times = window.anchor_time - delta * np.arange(n_lags)
    if lag_times[-1] < window.times[0] - 1e-9:
        raise WindowTooShort(
            f"need N at day {lag_times[-1]}, before the window start {window.times[0]}"
        )
    if delta == OBS_SPACING_DAYS:
        buf = window.counts[::-1][:n_lags].astype(np.int64)
    else:
        spline = CubicSpline(window.times, window.counts.astype(float), bc_type="natural")
        vals = np.floor(spline(lag_times) + 0.5)
        buf = np.maximum(vals, 0.0).astype(np.int64)
    return DelayState(buf, float(window.anchor_time))
