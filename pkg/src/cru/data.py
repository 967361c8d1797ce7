"""Dataset loading, scaling, chronological splitting and windowing."""

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from cru.stl import StlConfig, stl_decompose
from cru.train import Sample


class DataError(ValueError):
    """Malformed input data or an impossible split/window request."""


@dataclass
class Dataset:
    name: str
    channels: dict  # column name -> 1-D float array, insertion ordered
    period: int
    frequency: str = ""
    truth: dict = field(default_factory=dict)  # generator ground truth, if any

    def __post_init__(self):
        lengths = {np.size(v) for v in self.channels.values()}
        if not self.channels or len(lengths) != 1:
            raise DataError("a dataset needs one or more channels of equal length")
        for k, v in self.channels.items():
            v = np.asarray(v, dtype=np.float64)
            if not np.all(np.isfinite(v)):
                raise DataError(f"channel {k!r} contains non-finite values")
            self.channels[k] = v

    @property
    def values(self) -> np.ndarray:
        """``(T, m)`` array of all channels."""
        return np.column_stack(list(self.channels.values()))

    @property
    def n_rows(self) -> int:
        return next(iter(self.channels.values())).size

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def rows(self, start, stop) -> "Dataset":
        return replace(
            self,
            channels={k: v[start:stop].copy() for k, v in self.channels.items()},
            truth={k: v[start:stop].copy() for k, v in self.truth.items()},
        )


def _parse_timestamp(text):
    try:
        return float(int(text))
    except ValueError:
        return datetime.fromisoformat(text).timestamp()


def load_csv(path, columns=None, period: int = 12, name: str | None = None,
             frequency: str = "") -> Dataset:
    """Read a headed, comma-separated file of numeric channels.

    An optional first column named ``timestamp`` (integer index or ISO-8601)
    must be strictly increasing and is then dropped.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if r]

    has_ts = header[0].lower() == "timestamp"
    names = header[1:] if has_ts else header
    wanted = names if columns is None else list(columns)
    missing = [c for c in wanted if c not in names]
    if missing:
        raise DataError(f"columns not in {path.name}: {missing}")
    offset = 1 if has_ts else 0
    cols = [names.index(c) + offset for c in wanted]

    data = np.empty((len(rows), len(cols)))
    last_ts = -math.inf
    for r, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {line}: expected {len(header)} fields, found {len(row)}")
        if has_ts:
            try:
                ts = _parse_timestamp(row[0].strip())
            except ValueError:
                raise DataError(f"row {line}: bad timestamp {row[0]!r}") from None
            if ts <= last_ts:
                raise DataError(f"row {line}: timestamps are not strictly increasing")
            last_ts = ts
        for j, c in enumerate(cols):
            try:
                value = float(row[c])
            except ValueError:
                raise DataError(f"row {line}: non-numeric value {row[c]!r} in {header[c]!r}") from None
            if not math.isfinite(value):
                raise DataError(f"row {line}: non-finite value in {header[c]!r}")
            data[r, j] = value
    if not rows:
        raise DataError(f"{path} has no data rows")
    return Dataset(
        name or path.stem,
        {c: data[:, j] for j, c in enumerate(wanted)},
        period,
        frequency,
    )


# ---------------------------------------------------------------- scaling


@dataclass
class Scaler:
    kind: str = "zscore"
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    @classmethod
    def fit(cls, values, kind: str = "zscore") -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        m = values.shape[-1]
        if kind == "none":
            return cls(kind, np.zeros(m), np.ones(m))
        if kind == "zscore":
            shift, scale = values.mean(axis=0), values.std(axis=0)
        elif kind == "minmax":
            shift = values.min(axis=0)
            scale = values.max(axis=0) - shift
        else:
            raise DataError(f"unknown scaler {kind!r}")
        # degenerate channels stay unscaled (shift still applies)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(kind, shift, scale)

    def normalize(self, values):
        return (np.asarray(values, dtype=np.float64) - self.shift) / self.scale

    def denormalize(self, values):
        return np.asarray(values, dtype=np.float64) * self.scale + self.shift

    def to_dict(self):
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], np.asarray(d["shift"], dtype=np.float64),
                   np.asarray(d["scale"], dtype=np.float64))


# ---------------------------------------------------------------- split/windows


def chrono_split(d: Dataset, ratio: float = 0.7, min_rows: int = 1):
    """First ``floor(ratio * T)`` rows for training, the rest for testing."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    cut = math.floor(ratio * d.n_rows)
    if cut < min_rows or d.n_rows - cut < min_rows:
        raise DataError(
            f"split of {d.n_rows} rows at {ratio} gives {cut}/{d.n_rows - cut}, "
            f"need at least {min_rows} on each side"
        )
    return d.rows(0, cut), d.rows(cut, d.n_rows)


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int = 1
    stride: int = 1

    def __post_init__(self):
        for k in ("lookback", "horizon", "stride"):
            if getattr(self, k) < 1:
                raise DataError(f"{k} must be >= 1")

    @property
    def span(self) -> int:
        return self.lookback + self.horizon

    def count(self, n_rows: int) -> int:
        if n_rows < self.span:
            return 0
        return (n_rows - self.span) // self.stride + 1


def make_windows(values, spec: WindowSpec) -> list:
    """Slice ``(T, m)`` rows into lookback inputs and flattened horizon targets.

    The target of each sample is ``h * m`` long, horizon-major.
    """
    values = values.values if isinstance(values, Dataset) else np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n = spec.count(values.shape[0])
    if n == 0:
        raise DataError(f"{values.shape[0]} rows cannot hold a window of {spec.span}")
    L, h = spec.lookback, spec.horizon
    out = []
    for k in range(n):
        i = k * spec.stride
        out.append(Sample(values[i : i + L].copy(), values[i + L : i + L + h].ravel().copy()))
    return out


def decompose_window(window, cfg: StlConfig) -> np.ndarray:
    """STL of each channel of an ``(L, m)`` window -> ``(L, 3, m)``."""
    window = np.asarray(window, dtype=np.float64)
    out = np.empty((window.shape[0], 3, window.shape[1]))
    for j in range(window.shape[1]):
        c = stl_decompose(window[:, j], cfg)
        out[:, 0, j] = c.seasonal
        out[:, 1, j] = c.trend
        out[:, 2, j] = c.remainder
    return out


def decompose_windows(samples, cfg: StlConfig) -> list:
    """Attach per-timestep (seasonal, trend, remainder) slices to each sample."""
    samples = list(samples)
    if samples and samples[0].inputs.shape[0] < 2 * cfg.period:
        raise DataError(
            f"lookback {samples[0].inputs.shape[0]} is shorter than two periods ({2 * cfg.period})"
        )
    return [replace(s, decomposed=decompose_window(s.inputs, cfg)) for s in samples]


# ---------------------------------------------------------------- synthetic


SYNTH_KINDS = ("trend+season+noise", "random-walk", "constant")


def synth_series(kind: str, params: dict | None = None, seed: int = 0, length: int = 240) -> Dataset:
    """Seeded stand-in series with known components kept in ``truth``.

    ``trend+season+noise``: ``level + slope*t + amplitude*sin(2*pi*t/period
    + phase_k) + N(0, noise)`` per channel ``k``. ``random-walk``: cumulative
    Gaussian steps from ``start``. ``constant``: ``value`` everywhere.
    """
    params = dict(params or {})
    period = int(params.get("period", 12))
    channels = int(params.get("channels", 1))
    if length < 2 * period:
        raise DataError(f"length {length} is shorter than two periods")
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    data, truth = {}, {}
    for k in range(channels):
        col = f"y{k}" if channels > 1 else "y"
        if kind == "trend+season+noise":
            trend = params.get("level", 10.0) + params.get("slope", 0.05) * t
            phase = 2.0 * np.pi * k / max(channels, 1)
            season = params.get("amplitude", 2.0) * np.sin(2.0 * np.pi * t / period + phase)
            noise = rng.normal(0.0, params.get("noise", 0.1), size=length)
            data[col] = trend + season + noise
            truth[f"{col}.trend"] = trend
            truth[f"{col}.seasonal"] = season
            truth[f"{col}.remainder"] = noise
        elif kind == "random-walk":
            steps = rng.normal(0.0, params.get("sigma", 1.0), size=length)
            data[col] = params.get("start", 100.0) + np.cumsum(steps)
        elif kind == "constant":
            data[col] = np.full(length, float(params.get("value", 1.0)))
        else:
            raise DataError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    return Dataset(f"synth-{kind}-{seed}", data, period, "synthetic", truth)
