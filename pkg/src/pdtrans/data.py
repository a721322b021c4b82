"""Series containers, CSV ingestion, covariates, scaling and windowing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    GapInSeries,
    IndexOutOfRange,
    InvalidSpec,
    InvalidValue,
    MissingColumn,
    NonMonotoneTimestamps,
    WindowTooLong,
)

FREQUENCIES = {"hourly": pd.Timedelta(hours=1), "daily": pd.Timedelta(days=1)}

COVARIATE_SCHEMA = {
    "hourly": ("hour_of_day", "day_of_week", "age"),
    "daily": ("day_of_month", "month", "age"),
}

DEFAULT_SCHEMA = {"timestamp": "timestamp", "series_id": "series_id", "value": "value"}


@dataclass(frozen=True, eq=False)
class Series:
    series_id: int
    timestamps: np.ndarray  # datetime64[ns]
    values: np.ndarray  # float64

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class TimeSeriesDataset:
    """A set of aligned univariate series sharing one sampling frequency."""

    series: tuple[Series, ...]
    frequency: str = "hourly"
    covariate_schema: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.frequency not in FREQUENCIES:
            raise ValueError(f"unknown frequency {self.frequency!r}")
        if not self.covariate_schema:
            object.__setattr__(self, "covariate_schema", COVARIATE_SCHEMA[self.frequency])
        ids = [s.series_id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValueError("series ids must be unique")
        for s in self.series:
            s.values.setflags(write=False)
            s.timestamps.setflags(write=False)

    def __len__(self) -> int:
        return len(self.series)

    @property
    def series_ids(self) -> list[int]:
        return [s.series_id for s in self.series]

    @property
    def min_length(self) -> int:
        return min(len(s) for s in self.series)

    def get(self, series_id: int) -> Series:
        for s in self.series:
            if s.series_id == series_id:
                return s
        raise KeyError(series_id)

    def values_matrix(self) -> np.ndarray:
        """Stack values into ``[n_series, length]``; all series must share a length."""
        lengths = {len(s) for s in self.series}
        if len(lengths) != 1:
            raise ValueError("series have different lengths")
        return np.stack([s.values for s in self.series])

    def to_frame(self) -> pd.DataFrame:
        frames = [
            pd.DataFrame(
                {"timestamp": s.timestamps, "series_id": s.series_id, "value": s.values}
            )
            for s in self.series
        ]
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path) -> None:
        df = self.to_frame()
        df["timestamp"] = df["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%S")
        df.to_csv(path, index=False, float_format="%.17g")


def load_csv(
    path,
    schema: Mapping[str, str] | None = None,
    frequency: str = "hourly",
) -> TimeSeriesDataset:
    """Read a long-format CSV (one row per observation) into a dataset.

    ``schema`` maps the logical columns ``timestamp``, ``series_id`` and
    ``value`` onto header names in the file. Rows are grouped by series and
    sorted by time; a duplicated timestamp or a missing step is an error.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if frequency not in FREQUENCIES:
        raise ValueError(f"unknown frequency {frequency!r}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    for key in ("timestamp", "series_id", "value"):
        if schema[key] not in raw.columns:
            raise MissingColumn(schema[key], raw.columns)

    ts = pd.to_datetime(raw[schema["timestamp"]], errors="coerce", format="ISO8601")
    ids = pd.to_numeric(raw[schema["series_id"]], errors="coerce")
    vals = pd.to_numeric(raw[schema["value"]], errors="coerce")
    for name, parsed in (("timestamp", ts), ("series_id", ids), ("value", vals)):
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if name == "value" and not len(bad):
            bad = np.flatnonzero(~np.isfinite(vals.to_numpy(dtype=float)))
        if len(bad):
            row = int(bad[0])
            raise InvalidValue(row, schema[name], raw[schema[name]].iloc[row])
    # to_numeric's fast parser can be an ulp off; re-read accepted values exactly
    vals = raw[schema["value"]].str.strip().astype(np.float64)
    if ts.dt.tz is not None:
        ts = ts.dt.tz_convert(None)

    df = pd.DataFrame({"timestamp": ts, "series_id": ids.astype(np.int64), "value": vals})
    step = FREQUENCIES[frequency]
    series = []
    for sid, group in df.groupby("series_id", sort=True):
        group = group.sort_values("timestamp", kind="stable")
        stamps = group["timestamp"].to_numpy(dtype="datetime64[ns]")
        diffs = np.diff(stamps)
        dup = np.flatnonzero(diffs <= np.timedelta64(0))
        if len(dup):
            raise NonMonotoneTimestamps(int(sid), pd.Timestamp(stamps[dup[0] + 1]))
        gap = np.flatnonzero(diffs != step.to_timedelta64())
        if len(gap):
            i = gap[0]
            raise GapInSeries(
                int(sid), pd.Timestamp(stamps[i + 1]), pd.Timestamp(stamps[i]) + step
            )
        series.append(
            Series(int(sid), stamps, group["value"].to_numpy(dtype=np.float64).copy())
        )
    return TimeSeriesDataset(tuple(series), frequency)


# covariates ---------------------------------------------------------------


def _unit(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (x - lo) / (hi - lo) - 0.5


def series_covariates(series: Series, frequency: str) -> np.ndarray:
    """All covariates of one series as a ``[length, 3]`` float64 array."""
    idx = pd.DatetimeIndex(series.timestamps)
    n = len(series)
    if frequency == "hourly":
        a = _unit(idx.hour.to_numpy(float), 0, 23)
        b = _unit(idx.dayofweek.to_numpy(float), 0, 6)
    else:
        a = _unit(idx.day.to_numpy(float), 1, 31)
        b = _unit(idx.month.to_numpy(float), 1, 12)
    age = np.arange(n, dtype=np.float64) / max(n - 1, 1)
    return np.stack([a, b, age], axis=1)


def featurize_covariates(dataset: TimeSeriesDataset, series_id: int, t: int) -> np.ndarray:
    """Covariate vector at position ``t`` of a series (calendar terms in
    [-0.5, 0.5], relative age in [0, 1])."""
    s = dataset.get(series_id)
    if not 0 <= t < len(s):
        raise IndexOutOfRange(f"t={t} outside series {series_id} of length {len(s)}")
    return series_covariates(s, dataset.frequency)[t]


# scaling & windows ----------------------------------------------------------


def compute_scale(history) -> np.ndarray | float:
    """Mean-absolute scale ``1 + mean|history|`` along the last axis."""
    h = np.asarray(history, dtype=np.float64)
    if h.shape[-1] == 0:
        raise ValueError("history must be non-empty")
    scale = 1.0 + np.abs(h).mean(axis=-1)
    return float(scale) if np.ndim(scale) == 0 else scale


@dataclass(frozen=True, eq=False)
class WindowBatch:
    """Conditioning and prediction ranges for a batch of windows, already
    divided by their per-window ``scale``."""

    history: np.ndarray  # [batch, t0]
    target: np.ndarray  # [batch, tau]
    covariates: np.ndarray  # [batch, t0 + tau, k]
    scale: np.ndarray  # [batch]
    series_id: np.ndarray  # [batch] raw ids
    series_index: np.ndarray  # [batch] position of the series in its dataset
    start: np.ndarray  # [batch] absolute index of the first target step
    window: np.ndarray  # [batch] rolling-window number (eval) or -1 (train)

    def __len__(self) -> int:
        return self.history.shape[0]

    @property
    def t0(self) -> int:
        return self.history.shape[1]

    @property
    def tau(self) -> int:
        return self.target.shape[1]

    def unscale(self, x: np.ndarray) -> np.ndarray:
        """Map scaled-domain values with a leading batch axis back to the data domain."""
        x = np.asarray(x)
        return x * self.scale.reshape((-1,) + (1,) * (x.ndim - 1))

    def __getitem__(self, idx) -> WindowBatch:
        return WindowBatch(**{k: v[idx] for k, v in self._fields().items()})

    def _fields(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def concat(batches: Sequence[WindowBatch]) -> WindowBatch:
        keys = WindowBatch.__dataclass_fields__
        return WindowBatch(
            **{k: np.concatenate([getattr(b, k) for b in batches]) for k in keys}
        )

    def chunks(self, size: int) -> list[WindowBatch]:
        return [self[i : i + size] for i in range(0, len(self), size)]


def _build(dataset, picks, t0, tau, covs) -> WindowBatch:
    hist, targ, cov, sids, sidx, starts, wins = [], [], [], [], [], [], []
    for i, start, w in picks:
        s = dataset.series[i]
        hist.append(s.values[start - t0 : start])
        targ.append(s.values[start : start + tau])
        cov.append(covs[i][start - t0 : start + tau])
        sids.append(s.series_id)
        sidx.append(i)
        starts.append(start)
        wins.append(w)
    hist = np.asarray(hist, dtype=np.float64).reshape(len(picks), t0)
    targ = np.asarray(targ, dtype=np.float64).reshape(len(picks), tau)
    scale = np.atleast_1d(compute_scale(hist)) if len(picks) else np.zeros(0)
    return WindowBatch(
        history=hist / scale[:, None],
        target=targ / scale[:, None],
        covariates=np.asarray(cov, dtype=np.float64).reshape(len(picks), t0 + tau, -1),
        scale=scale,
        series_id=np.asarray(sids, dtype=np.int64),
        series_index=np.asarray(sidx, dtype=np.int64),
        start=np.asarray(starts, dtype=np.int64),
        window=np.asarray(wins, dtype=np.int64),
    )


def make_windows(
    dataset: TimeSeriesDataset,
    t0: int,
    tau: int,
    stride: int | None = None,
    mode: str = "eval",
    *,
    n_windows: int | None = None,
    end_offset: int = 0,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    batch_size: int | None = None,
) -> list[WindowBatch]:
    """Cut windows of ``t0`` history and ``tau`` targets out of every series.

    ``eval`` mode emits non-overlapping rolling windows (stride ``tau`` by
    default) whose last target ends ``end_offset`` steps before the series
    end, oldest first; ``n_windows`` caps the count per series. ``train``
    mode draws ``n_samples`` window starts uniformly (on a ``stride`` grid)
    from the part of each series that ends ``end_offset`` steps early.
    """
    if t0 < 1 or tau < 1:
        raise ValueError("t0 and tau must be >= 1")
    usable = dataset.min_length - end_offset
    if t0 + tau > usable:
        raise WindowTooLong(
            f"t0 + tau = {t0 + tau} exceeds usable series length {usable}"
        )
    covs = [series_covariates(s, dataset.frequency) for s in dataset.series]
    picks = []
    if mode == "eval":
        stride = tau if stride is None else stride
        for i, s in enumerate(dataset.series):
            end = len(s) - end_offset
            count = (end - t0 - tau) // stride + 1
            if n_windows is not None:
                count = min(count, n_windows)
            first = end - tau - (count - 1) * stride
            picks.extend((i, first + w * stride, w) for w in range(count))
    elif mode == "train":
        stride = 1 if stride is None else stride
        rng = rng if rng is not None else np.random.default_rng()
        n = n_samples if n_samples is not None else len(dataset)
        which = rng.integers(0, len(dataset), size=n)
        for i in which:
            end = len(dataset.series[i]) - end_offset
            n_starts = (end - tau - t0) // stride + 1
            start = t0 + stride * int(rng.integers(0, n_starts))
            picks.append((int(i), start, -1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    batch = _build(dataset, picks, t0, tau, covs)
    if batch_size is None:
        return [batch]
    return batch.chunks(batch_size)


# synthetic fixture ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_series: int = 20
    length: int = 960
    slope: float = 0.01
    amplitude: float = 1.0
    period: int = 24
    noise_std: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_series < 1:
            raise InvalidSpec("n_series must be >= 1")
        if self.period < 2:
            raise InvalidSpec("period must be >= 2")
        if self.length < 2 * self.period:
            raise InvalidSpec("length must be >= 2 * period")
        if not self.noise_std >= 0 or not math.isfinite(self.noise_std):
            raise InvalidSpec("noise_std must be finite and >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> SyntheticSpec:
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"unknown fields {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    trend: np.ndarray  # [n_series, length]
    seasonal: np.ndarray
    noise: np.ndarray

    def to_frame(self, dataset: TimeSeriesDataset) -> pd.DataFrame:
        rows = []
        for i, s in enumerate(dataset.series):
            rows.append(
                pd.DataFrame(
                    {
                        "series_id": s.series_id,
                        "step": np.arange(len(s)),
                        "trend": self.trend[i],
                        "seasonal": self.seasonal[i],
                        "noise": self.noise[i],
                    }
                )
            )
        return pd.concat(rows, ignore_index=True)


def gen_synthetic(
    spec: SyntheticSpec, start: str = "2020-01-01"
) -> tuple[TimeSeriesDataset, SyntheticTruth]:
    """Hourly series ``slope*t + amplitude*sin(2*pi*t/period) + noise``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    trend = np.tile(spec.slope * t, (spec.n_series, 1))
    seasonal = np.tile(spec.amplitude * np.sin(2 * np.pi * t / spec.period), (spec.n_series, 1))
    noise = spec.noise_std * rng.standard_normal((spec.n_series, spec.length))
    values = trend + seasonal + noise
    stamps = pd.date_range(start, periods=spec.length, freq="h").to_numpy(dtype="datetime64[ns]")
    series = tuple(Series(i, stamps.copy(), values[i].copy()) for i in range(spec.n_series))
    return TimeSeriesDataset(series, "hourly"), SyntheticTruth(trend, seasonal, noise)


def load_spec(path) -> SyntheticSpec:
    return SyntheticSpec.from_json(Path(path).read_text())
