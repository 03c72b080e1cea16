"""Limit order book feature streams: loading, labeling, windowing, folds.

A corpus is a list of per-day series. Each day carries pre-extracted
144-dimensional feature rows plus the mid-price at each event. Labels
describe the direction of the mid-price over the next ``horizon`` events
relative to a proportional threshold; classifiers consume fixed-length
windows of the most recent rows.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .core import Rng
from .errors import FormatError

N_FEATURES = 144

DOWN, STATIONARY, UP = 0, 1, 2
CLASS_NAMES = ("down", "stationary", "up")

MEAN_HORIZON = "mean_horizon"
POINT_HORIZON = "point_horizon"

# synthetic corpus: which feature columns carry the planted signal
SIGNAL_COLUMNS = tuple(range(4, N_FEATURES, 9))


@dataclass
class FeatureSeries:
    """One trading day: event-aligned feature rows and mid-prices."""

    day_id: int
    features: np.ndarray  # (n_events, N_FEATURES)
    mid_prices: np.ndarray  # (n_events,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mid_prices = np.asarray(self.mid_prices, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"features must be (n, {N_FEATURES}), got {self.features.shape}")
        if self.mid_prices.shape != (self.features.shape[0],):
            raise ValueError("mid_prices length must match feature rows")

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FoldSpec:
    train_days: tuple[int, ...]
    test_day: int


def label_sample(
    mid_prices: np.ndarray,
    t: int,
    horizon: int = 10,
    threshold: float = 1e-4,
    mode: str = MEAN_HORIZON,
) -> int:
    """Direction of the mid-price after event ``t``.

    ``mean_horizon`` compares the mean of the next ``horizon`` mids to the
    current one; ``point_horizon`` compares the single mid ``horizon``
    events ahead. A proportional move of at least ``threshold`` in either
    direction is up/down, anything smaller is stationary. Equality with
    the threshold counts as directional.
    """
    mid_prices = np.asarray(mid_prices, dtype=np.float64)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if t < 0 or t + horizon >= len(mid_prices):
        raise ValueError(f"t={t} leaves no {horizon}-step future in {len(mid_prices)} events")
    if mode == MEAN_HORIZON:
        future = float(np.mean(mid_prices[t + 1 : t + 1 + horizon]))
    elif mode == POINT_HORIZON:
        future = float(mid_prices[t + horizon])
    else:
        raise ValueError(f"unknown label mode {mode!r}")
    r = (future - mid_prices[t]) / mid_prices[t]
    if r >= threshold:
        return UP
    if r <= -threshold:
        return DOWN
    return STATIONARY


def _label_day(
    mids: np.ndarray, horizon: int, threshold: float, mode: str
) -> np.ndarray:
    """Labels for every t in [0, n - horizon), vectorized."""
    n = len(mids)
    if n <= horizon:
        return np.empty(0, dtype=np.int64)
    if mode == MEAN_HORIZON:
        csum = np.concatenate([[0.0], np.cumsum(mids)])
        future = (csum[horizon + 1 :] - csum[1 : n - horizon + 1]) / horizon
    elif mode == POINT_HORIZON:
        future = mids[horizon:]
    else:
        raise ValueError(f"unknown label mode {mode!r}")
    now = mids[: n - horizon]
    r = (future - now) / now
    labels = np.full(r.shape, STATIONARY, dtype=np.int64)
    labels[r >= threshold] = UP
    labels[r <= -threshold] = DOWN
    return labels


def windowize(
    series: FeatureSeries,
    window: int = 15,
    horizon: int = 10,
    threshold: float = 1e-4,
    mode: str = MEAN_HORIZON,
) -> tuple[np.ndarray, np.ndarray]:
    """All labeled windows of one day: (n_samples, window, N_FEATURES) and labels.

    Sample t exists when a full window of history ends at t and a full
    horizon follows it, so n_samples = n_events - window - horizon + 1
    (zero when the day is too short).
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    n = len(series)
    count = n - window - horizon + 1
    if count <= 0:
        return (
            np.empty((0, window, N_FEATURES)),
            np.empty(0, dtype=np.int64),
        )
    labels = _label_day(series.mid_prices, horizon, threshold, mode)[window - 1 :]
    idx = np.arange(count)[:, None] + np.arange(window)[None, :]
    return series.features[idx], labels


def anchored_folds(day_ids: list[int]) -> list[FoldSpec]:
    """Anchored walk-forward splits: fold k trains on days 1..k, tests on day k+1."""
    ids = [int(d) for d in day_ids]
    days = sorted(set(ids))
    if len(days) != len(ids):
        raise ValueError("day ids must be unique")
    if len(days) < 2:
        raise ValueError(f"need at least 2 days for walk-forward folds, got {len(days)}")
    return [FoldSpec(tuple(days[: k + 1]), days[k + 1]) for k in range(len(days) - 1)]


class WindowDataset:
    """Window samples over a corpus, gathered lazily from per-day arrays.

    Windows are never materialized up front; ``gather`` slices them out of
    the day arrays on demand, so memory stays proportional to the raw rows.
    """

    def __init__(
        self,
        corpus: list[FeatureSeries],
        window: int = 15,
        horizon: int = 10,
        threshold: float = 1e-4,
        mode: str = MEAN_HORIZON,
    ):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self.horizon = horizon
        self._days = [np.ascontiguousarray(s.features) for s in corpus]
        day_idx, ts, labels, day_ids = [], [], [], []
        for i, s in enumerate(corpus):
            count = len(s) - window - horizon + 1
            if count <= 0:
                continue
            day_labels = _label_day(s.mid_prices, horizon, threshold, mode)[window - 1 :]
            day_idx.append(np.full(count, i, dtype=np.int64))
            ts.append(np.arange(window - 1, window - 1 + count, dtype=np.int64))
            labels.append(day_labels)
            day_ids.append(np.full(count, s.day_id, dtype=np.int64))
        self._day_idx = np.concatenate(day_idx) if day_idx else np.empty(0, dtype=np.int64)
        self._t = np.concatenate(ts) if ts else np.empty(0, dtype=np.int64)
        self.labels = np.concatenate(labels) if labels else np.empty(0, dtype=np.int64)
        self.day_ids = np.concatenate(day_ids) if day_ids else np.empty(0, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return N_FEATURES

    def __len__(self) -> int:
        return self.n_samples

    def gather(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices)
        x = np.empty((indices.size, self.window, N_FEATURES))
        for row, i in enumerate(indices):
            day = self._days[self._day_idx[i]]
            t = self._t[i]
            x[row] = day[t - self.window + 1 : t + 1]
        return x, self.labels[indices]


# ---------------------------------------------------------------------------
# CSV corpus format. One file per day, header day_id,mid_price,f1..f144,
# one event per row. Floats are written with repr() so a round trip is exact.

_HEADER = ["day_id", "mid_price"] + [f"f{i}" for i in range(1, N_FEATURES + 1)]


def load_feature_csv(path) -> FeatureSeries:
    day_id = None
    mids: list[float] = []
    rows: list[list[float]] = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file", location="line 1") from None
        if header != _HEADER:
            raise FormatError(
                f"{path}: bad header, expected day_id,mid_price,f1..f{N_FEATURES}",
                location="line 1",
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(_HEADER):
                raise FormatError(
                    f"{path}: expected {len(_HEADER)} columns, got {len(row)}",
                    location=f"line {lineno}",
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise FormatError(f"{path}: {exc}", location=f"line {lineno}") from None
            row_day = int(values[0])
            if values[0] != row_day:
                raise FormatError(
                    f"{path}: day_id must be an integer, got {row[0]}",
                    location=f"line {lineno}",
                )
            if day_id is None:
                day_id = row_day
            elif row_day != day_id:
                raise FormatError(
                    f"{path}: mixed day ids {day_id} and {row_day} in one file",
                    location=f"line {lineno}",
                )
            if values[1] <= 0:
                raise FormatError(
                    f"{path}: mid_price must be positive, got {row[1]}",
                    location=f"line {lineno}",
                )
            mids.append(values[1])
            rows.append(values[2:])
    if day_id is None:
        raise FormatError(f"{path}: no data rows", location="line 2")
    return FeatureSeries(day_id, np.array(rows), np.array(mids))


def write_feature_csv(path, series: FeatureSeries) -> None:
    lines = [",".join(_HEADER)]
    for mid, feats in zip(series.mid_prices, series.features):
        lines.append(
            ",".join([str(series.day_id), repr(float(mid))] + [repr(float(v)) for v in feats])
        )
    from .config import write_atomic

    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_feature_dir(directory) -> list[FeatureSeries]:
    """Load every *.csv in a directory, returned in day-id order."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".csv"))
    if not names:
        raise FormatError(f"no .csv files in {directory}")
    corpus = [load_feature_csv(os.path.join(directory, n)) for n in names]
    corpus.sort(key=lambda s: s.day_id)
    seen = [s.day_id for s in corpus]
    if len(set(seen)) != len(seen):
        raise FormatError(f"duplicate day ids across files in {directory}: {seen}")
    return corpus


# ---------------------------------------------------------------------------
# synthetic corpus with a known planted signal


def synth_generate(
    n_days: int,
    rows_per_day: int,
    seed: int = 0,
    separation: float = 1.0,
    horizon: int = 10,
    drift: float = 4e-4,
    walk_noise: float = 5e-6,
    signal_noise: float = 0.05,
    base_price: float = 100.0,
    block_min: int = 30,
    block_max: int = 60,
) -> list[FeatureSeries]:
    """Generate a corpus whose direction labels are predictable from features.

    The mid-price follows block regimes (down, flat, up) lasting
    ``block_min`` to ``block_max`` events (regime persistence), with
    per-step drift ``drift`` times the regime, plus a small
    multiplicative noise walk. A subset of feature columns
    (``SIGNAL_COLUMNS``) carries the noise-free normalized forward return
    scaled by ``separation``; every other column is standard normal. At
    separation 0 the features carry no information about the labels.
    Labels themselves are always computed from the realized mid-prices,
    not planted.
    """
    if n_days < 1 or rows_per_day < 1:
        raise ValueError("n_days and rows_per_day must be >= 1")
    if not 1 <= block_min <= block_max:
        raise ValueError(f"need 1 <= block_min <= block_max, got {block_min}..{block_max}")
    signal = np.zeros(N_FEATURES, dtype=bool)
    signal[list(SIGNAL_COLUMNS)] = True
    corpus = []
    for day, rng in enumerate(Rng.from_seed(seed).split(n_days), start=1):
        total = rows_per_day + horizon
        regimes = np.empty(total)
        pos = 0
        while pos < total:
            length = int(rng.integers(block_min, block_max + 1))
            regimes[pos : pos + length] = float(rng.integers(-1, 2))
            pos += length
        # realized mid path: regime drift plus a small noise walk
        steps = drift * regimes + walk_noise * rng.normal(size=total)
        mids = base_price * np.cumprod(1.0 + steps)
        # noise-free path defines the planted signal
        clean = base_price * np.cumprod(1.0 + drift * regimes)
        csum = np.concatenate([[0.0], np.cumsum(clean)])
        future = (csum[horizon + 1 :] - csum[1 : total - horizon + 1]) / horizon
        z = (future / clean[:rows_per_day] - 1.0) / (drift * (horizon + 1) / 2.0)
        feats = rng.normal(size=(rows_per_day, N_FEATURES))
        feats[:, signal] = separation * z[:, None] + signal_noise * feats[:, signal]
        corpus.append(FeatureSeries(day, feats, mids[:rows_per_day]))
    return corpus
