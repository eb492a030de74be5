"""CSV ingestion, zero-inflation accounting, cleaning policy, scaling and
channel-independent windowing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

HOUR = 3600.0
WEEK = 7 * 24 * HOUR


@dataclass
class SeriesFrame:
    columns: list[str]
    values: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column count does not match values")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names) -> "SeriesFrame":
        idx = [self.columns.index(n) for n in names]
        return SeriesFrame([self.columns[i] for i in idx], self.values[:, idx].copy(),
                           self.timestamps)


def read_csv(path, timestamp_col: str | None = "date", columns=None) -> SeriesFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    ts = None
    if timestamp_col and timestamp_col in df.columns:
        ts = df.pop(timestamp_col).to_numpy()
    if columns is not None:
        df = df[list(columns)]
    bad = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    if bad:
        raise ValueError(f"non-numeric columns: {bad}")
    return SeriesFrame(list(df.columns), df.to_numpy(dtype=np.float64), ts)


def write_csv(frame: SeriesFrame, path, timestamp_col: str = "date") -> None:
    df = pd.DataFrame(frame.values, columns=frame.columns)
    if frame.timestamps is not None:
        df.insert(0, timestamp_col, frame.timestamps)
    df.to_csv(path, index=False, float_format="%.17g")


def from_trajectory(traj) -> SeriesFrame:
    return SeriesFrame(traj.columns, traj.values)


# ---------------------------------------------------------------- zero accounting


def zero_runs(col: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of each maximal run of exact zeros."""
    z = np.concatenate(([0], (col == 0.0).astype(np.int8), [0]))
    d = np.diff(z)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


@dataclass
class ColumnZeros:
    column: str
    total: int
    percent: float
    isolated: int
    clustered: int
    longest_run: int


def zero_report(frame: SeriesFrame) -> list[ColumnZeros]:
    out = []
    for j, name in enumerate(frame.columns):
        runs = zero_runs(frame.values[:, j])
        total = sum(n for _, n in runs)
        isolated = sum(1 for _, n in runs if n == 1)
        out.append(ColumnZeros(name, total, 100.0 * total / frame.rows, isolated,
                               total - isolated, max((n for _, n in runs), default=0)))
    return out


def report_json(report: list[ColumnZeros]) -> str:
    return json.dumps([asdict(r) for r in report], indent=2)


# ---------------------------------------------------------------- cleaning policy


@dataclass
class Policy:
    """Thresholds for the zero/sentinel cleaning policy.

    ``sampling_interval`` is seconds per row and is required as soon as any
    column has a zero run.  ``sentinels`` maps column -> list of values
    treated as stuck-sensor sentinels (no auto-detection).
    """

    sampling_interval: float | None = None
    drop_zero_pct: float = 15.0
    asinh_zero_pct: float = 10.0
    drop_sentinel_pct: float = 10.0
    drop_run_seconds: float = WEEK
    delete_run_seconds: float = 3 * HOUR
    sentinels: dict[str, list[float]] = field(default_factory=dict)


def apply_policy(frame: SeriesFrame, policy: Policy) -> tuple[SeriesFrame, list[dict]]:
    """Apply the cleaning policy; returns the new frame and an action log.

    Decisions are taken on the input frame.  Column drops come first, then
    rows inside over-long zero runs are deleted across the whole frame, then
    the remaining zeros of kept columns are forward/backward filled, and
    finally the asinh transform is applied to its columns.
    """
    log: list[dict] = []
    keep, asinh_cols = [], []
    delete = np.zeros(frame.rows, dtype=bool)
    fill_cols = []
    for j, name in enumerate(frame.columns):
        col = frame.values[:, j]
        runs = zero_runs(col)
        zpct = 100.0 * sum(n for _, n in runs) / frame.rows
        sent = policy.sentinels.get(name, [])
        spct = 100.0 * np.isin(col, sent).sum() / frame.rows if sent else 0.0
        if spct > policy.drop_sentinel_pct:
            log.append({"column": name, "rule": "sentinel>10%", "rows": frame.rows})
            continue
        if zpct > policy.drop_zero_pct:
            log.append({"column": name, "rule": "zeros>15%", "rows": frame.rows})
            continue
        if runs and policy.sampling_interval is None:
            raise ValueError("sampling_interval is required when zero runs are present")
        longest = max((n for _, n in runs), default=0)
        if runs and longest * policy.sampling_interval > policy.drop_run_seconds:
            log.append({"column": name, "rule": "zero run>1 week", "rows": frame.rows})
            continue
        keep.append(j)
        if zpct >= policy.asinh_zero_pct:
            asinh_cols.append(j)
        long_rows, short_rows = [], 0
        for start, n in runs:
            if n * policy.sampling_interval > policy.delete_run_seconds:
                delete[start:start + n] = True
                long_rows.extend(range(start, start + n))
            else:
                short_rows += n
        if long_rows:
            log.append({"column": name, "rule": "zero run>3 hours: delete rows",
                        "rows": len(long_rows)})
        if short_rows:
            fill_cols.append(j)
            log.append({"column": name, "rule": "zero run<=3 hours: ffill/bfill",
                        "rows": short_rows})

    values = frame.values[~delete][:, keep].copy()
    ts = frame.timestamps[~delete] if frame.timestamps is not None else None
    names = [frame.columns[j] for j in keep]
    for j in keep:
        k = keep.index(j)
        if np.any(values[:, k] == 0.0):
            s = pd.Series(values[:, k]).replace(0.0, np.nan).ffill().bfill()
            values[:, k] = s.to_numpy()
    for j in asinh_cols:
        k = keep.index(j)
        values[:, k] = np.arcsinh(values[:, k])
        log.append({"column": frame.columns[j], "rule": "zeros 10-15%: asinh",
                    "rows": int(values.shape[0])})
    return SeriesFrame(names, values, ts), log


def parse_interval(text: str | float | None) -> float | None:
    """'1h', '10min', '15T' or seconds -> seconds."""
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return float(text)
    try:
        return float(text)
    except ValueError:
        return pd.Timedelta(text).total_seconds()


# ---------------------------------------------------------------- scaling


@dataclass
class Scaler:
    kind: str
    center: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.center) / self.scale

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.center


def fit_scaler(train: np.ndarray, kind: str = "standard", floor: float = 1e-8) -> Scaler:
    """Per-column scaler; ``standard`` = mean / population std, ``robust`` =
    median / MAD (unscaled median absolute deviation)."""
    train = np.asarray(train, dtype=np.float64)
    if train.ndim == 1:
        train = train[:, None]
    if train.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty split")
    if kind == "standard":
        center = train.mean(axis=0)
        scale = train.std(axis=0)
    elif kind == "robust":
        center = np.median(train, axis=0)
        scale = np.median(np.abs(train - center), axis=0)
    elif kind == "none":
        center = np.zeros(train.shape[1])
        scale = np.ones(train.shape[1])
    else:
        raise ValueError(f"unknown scaler kind {kind!r}")
    return Scaler(kind, center, np.maximum(scale, floor))


# ---------------------------------------------------------------- windowing


@dataclass
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    input_len: int = 336
    horizon: int = 336
    scaler: str = "standard"
    std_ddof: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must be positive and sum to 1")

    def boundaries(self, rows: int) -> tuple[int, int, int]:
        b1 = int(math.floor(self.ratios[0] * rows + 1e-9))
        b2 = b1 + int(math.floor(self.ratios[1] * rows + 1e-9))
        return b1, b2, rows


@dataclass
class Split:
    x: np.ndarray        # (N, L) scaled context windows
    y: np.ndarray        # (N, H) scaled targets
    channel: np.ndarray  # (N,) channel index
    offset: np.ndarray   # (N,) window start within the split

    def __len__(self):
        return self.x.shape[0]

    def by_channel(self, arr: np.ndarray) -> np.ndarray:
        """Reshape a per-window (N, ...) array to (offsets, channels, ...)."""
        d = int(self.channel.max()) + 1
        return arr.reshape((d, -1) + arr.shape[1:]).swapaxes(0, 1)


@dataclass
class WindowedDataset:
    train: Split
    val: Split
    test: Split
    scaler: Scaler
    eps: np.ndarray            # raw train std per channel (EPT thresholds)
    boundaries: tuple[int, int, int]
    spec: SplitSpec
    columns: list[str]
    train_mean: np.ndarray     # scaled train-split mean per channel
    name: str = ""

    @property
    def channels(self) -> int:
        return len(self.columns)


def _windows(block: np.ndarray, L: int, H: int) -> Split:
    rows, d = block.shape
    n = rows - L - H + 1
    if n < 1:
        raise ValueError(f"split of {rows} rows is shorter than one window ({L}+{H})")
    xs, ys, ch, off = [], [], [], []
    for c in range(d):
        series = block[:, c]
        w = np.lib.stride_tricks.sliding_window_view(series, L + H)
        xs.append(w[:, :L])
        ys.append(w[:, L:])
        ch.append(np.full(n, c))
        off.append(np.arange(n))
    return Split(np.ascontiguousarray(np.concatenate(xs)), np.ascontiguousarray(np.concatenate(ys)),
                 np.concatenate(ch), np.concatenate(off))


def split_and_window(frame: SeriesFrame, spec: SplitSpec, name: str = "") -> WindowedDataset:
    """Split rows, fit the scaler on train rows, window each split.

    Windows never straddle a split boundary; channels are stacked along the
    batch axis (channel-major).
    """
    b1, b2, b3 = spec.boundaries(frame.rows)
    raw = frame.values
    train_raw = raw[:b1]
    scaler = fit_scaler(train_raw, spec.scaler)
    eps = np.maximum(train_raw.std(axis=0, ddof=spec.std_ddof), 1e-12)
    scaled = scaler.transform(raw)
    L, H = spec.input_len, spec.horizon
    return WindowedDataset(_windows(scaled[:b1], L, H), _windows(scaled[b1:b2], L, H),
                           _windows(scaled[b2:b3], L, H), scaler, eps, (b1, b2, b3),
                           spec, list(frame.columns), scaled[:b1].mean(axis=0), name)
