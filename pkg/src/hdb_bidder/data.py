"""Market price series: CSV ingestion, synthetic generation, and observation features.

A market series holds one price node's real-time (RT) prices on a 5-minute
grid and day-ahead (DA) prices on an hourly grid.  The agent's observation at
a timestamp combines a sinusoidal time-of-day encoding, low-order DFT features
of the recent RT and DA price history, and the storage state of charge.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

RT_STEP_S = 300
DA_STEP_S = 3600
DAY_S = 86400
RT_PER_HOUR = 12
RT_PER_DAY = 288
DA_PER_DAY = 24

# Feature windows: 6 hours of RT points, 4 days of DA points.
RT_WINDOW = 6 * RT_PER_HOUR
DA_WINDOW = 4 * DA_PER_DAY

# Default price range used for normalization (USD/MWh).
LAMBDA_MIN = -50.0
LAMBDA_MAX = 200.0

OBS_DIM = 15


class SeriesError(ValueError):
    """Raised when a price file or series violates the schema."""


@dataclass(frozen=True)
class MarketSeries:
    """One node's RT (5-minute) and DA (hourly) price history.

    Timestamps are int64 epoch seconds (UTC), strictly increasing with
    uniform spacing.  RT length is a whole number of hours and every RT
    timestamp falls inside the DA coverage window.
    """

    node_id: str
    rt_ts: np.ndarray
    rt_price: np.ndarray
    da_ts: np.ndarray
    da_price: np.ndarray

    def __post_init__(self):
        validate_series(self)

    @property
    def n_days(self) -> int:
        return len(self.rt_ts) // RT_PER_DAY

    def rt_index(self, t: int) -> int:
        """Index of the RT sample at epoch second ``t`` (exact match required)."""
        i = int(np.searchsorted(self.rt_ts, t))
        if i >= len(self.rt_ts) or self.rt_ts[i] != t:
            raise SeriesError(f"timestamp {t} is not on the 5-minute RT grid")
        return i

    def da_index_of_hour(self, t: int) -> int:
        """Index of the DA hour containing epoch second ``t``."""
        j = int(np.searchsorted(self.da_ts, t, side="right")) - 1
        if j < 0 or t >= self.da_ts[j] + DA_STEP_S:
            raise SeriesError(f"timestamp {t} outside DA coverage")
        return j


def validate_series(series: MarketSeries) -> None:
    rt_ts, da_ts = np.asarray(series.rt_ts), np.asarray(series.da_ts)
    if len(rt_ts) == 0 or len(da_ts) == 0:
        raise SeriesError("no rows")
    if len(rt_ts) != len(series.rt_price) or len(da_ts) != len(series.da_price):
        raise SeriesError("timestamp/price length mismatch")
    for name, ts, step in (("rt", rt_ts, RT_STEP_S), ("da", da_ts, DA_STEP_S)):
        gaps = np.diff(ts)
        bad = np.nonzero(gaps != step)[0]
        if bad.size:
            raise SeriesError(f"non-uniform spacing at row {int(bad[0]) + 1} of {name} series")
    if len(rt_ts) % RT_PER_HOUR != 0:
        raise SeriesError("RT series does not cover a whole number of hours")
    if rt_ts[0] < da_ts[0] or rt_ts[-1] >= da_ts[-1] + DA_STEP_S:
        raise SeriesError("RT timestamps fall outside DA coverage")
    if not (np.isfinite(series.rt_price).all() and np.isfinite(series.da_price).all()):
        raise SeriesError("non-finite price")


def parse_timestamp(text: str) -> int:
    """ISO-8601 UTC timestamp -> epoch seconds. Accepts a trailing 'Z'."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(t: int) -> str:
    return datetime.fromtimestamp(int(t), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _read_price_csv(path: Path, price_col: str):
    if not path.is_file():
        raise SeriesError(f"missing price file {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["timestamp", "node", price_col]
        if reader.fieldnames != expected:
            raise SeriesError(f"{path.name}: header must be {','.join(expected)}")
        for k, row in enumerate(reader, start=1):
            try:
                rows.append((parse_timestamp(row["timestamp"]), row["node"], float(row[price_col])))
            except (TypeError, ValueError) as exc:
                raise SeriesError(f"{path.name}: malformed row {k}: {exc}") from exc
    if not rows:
        raise SeriesError(f"{path.name}: no rows")
    rows.sort(key=lambda r: r[0])
    ts = np.array([r[0] for r in rows], dtype=np.int64)
    price = np.array([r[2] for r in rows], dtype=np.float64)
    nodes = {r[1] for r in rows}
    if len(nodes) != 1:
        raise SeriesError(f"{path.name}: expected one node per file, found {sorted(nodes)}")
    return ts, price, nodes.pop()


def load_series(path) -> MarketSeries:
    """Load a series from ``<path>/rt.csv`` and ``<path>/da.csv``.

    ``path`` is a directory holding the RT file (header ``timestamp,node,rt_lmp``)
    and the DA file (header ``timestamp,node,da_lmp``) for a single node.
    Rows may be unordered in the file; they are sorted by timestamp.  Schema
    violations raise :class:`SeriesError` naming the offending row.
    """
    root = Path(path)
    rt_ts, rt_price, rt_node = _read_price_csv(root / "rt.csv", "rt_lmp")
    da_ts, da_price, da_node = _read_price_csv(root / "da.csv", "da_lmp")
    if rt_node != da_node:
        raise SeriesError(f"node mismatch between files: {rt_node!r} vs {da_node!r}")
    return MarketSeries(rt_node, rt_ts, rt_price, da_ts, da_price)


def save_series(series: MarketSeries, path) -> None:
    """Write ``rt.csv`` and ``da.csv`` under ``path`` (inverse of load_series)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "rt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "node", "rt_lmp"])
        for t, p in zip(series.rt_ts, series.rt_price):
            w.writerow([format_timestamp(t), series.node_id, f"{p:.6f}"])
    with open(root / "da.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "node", "da_lmp"])
        for t, p in zip(series.da_ts, series.da_price):
            w.writerow([format_timestamp(t), series.node_id, f"{p:.6f}"])


SYNTH_EPOCH = 1704067200  # 2024-01-01T00:00:00Z


def synth_series(seed: int, days: int, node_id: str = "SYNTH",
                 lam_min: float = LAMBDA_MIN, lam_max: float = LAMBDA_MAX) -> MarketSeries:
    """Generate a synthetic RT/DA price series.

    Prices follow a daily sinusoid with a random per-day amplitude, plus
    price spikes concentrated in the afternoon/evening, occasional negative
    dips at night, and Gaussian noise, clipped into ``[lam_min, lam_max]``.
    The DA series is the hourly mean of RT.  Deterministic for a given seed.
    """
    if days < 5:
        raise ValueError("days must be >= 5 (4-day DA lookback plus one usable day)")
    rng = np.random.default_rng(seed)
    n = days * RT_PER_DAY
    hour = (np.arange(n) % RT_PER_DAY) / RT_PER_HOUR

    day_amp = rng.uniform(0.85, 1.15, size=days).repeat(RT_PER_DAY)
    base = 52.0 - 45.0 * np.cos(2.0 * math.pi * (hour - 17.0) / 24.0) * day_amp

    # Spikes cluster where the daily shape peaks (roughly 13:00-21:00).
    spike_p = 0.002 + 0.05 * np.clip(np.cos(2.0 * math.pi * (hour - 17.0) / 24.0), 0.0, None) ** 2
    spikes = (rng.random(n) < spike_p) * rng.exponential(60.0, size=n)
    dips = (rng.random(n) < 0.002) * rng.exponential(35.0, size=n)

    rt = base + spikes - dips + rng.normal(0.0, 2.0, size=n)
    rt = np.clip(rt, lam_min, lam_max)

    da = rt.reshape(days * DA_PER_DAY, RT_PER_HOUR).mean(axis=1)
    da = np.clip(da, lam_min, lam_max)

    rt_ts = SYNTH_EPOCH + RT_STEP_S * np.arange(n, dtype=np.int64)
    da_ts = SYNTH_EPOCH + DA_STEP_S * np.arange(days * DA_PER_DAY, dtype=np.int64)
    return MarketSeries(node_id, rt_ts, rt, da_ts, da)


def split(series: MarketSeries, train_frac: float) -> tuple[MarketSeries, MarketSeries]:
    """Chronological train/test split at the nearest day boundary.

    The boundary is clamped so both halves hold at least one day; the two
    halves partition the input exactly.
    """
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    days = series.n_days
    if days < 2:
        raise ValueError("series too short to split")
    k = int(round(train_frac * days))
    k = min(max(k, 1), days - 1)
    rt_cut, da_cut = k * RT_PER_DAY, k * DA_PER_DAY
    train = MarketSeries(series.node_id, series.rt_ts[:rt_cut], series.rt_price[:rt_cut],
                         series.da_ts[:da_cut], series.da_price[:da_cut])
    test = MarketSeries(series.node_id, series.rt_ts[rt_cut:], series.rt_price[rt_cut:],
                        series.da_ts[da_cut:], series.da_price[da_cut:])
    return train, test


def normalize_price(price, lam_min: float = LAMBDA_MIN, lam_max: float = LAMBDA_MAX):
    """Affine map of USD/MWh prices onto [-1, 1], clipping out-of-range values."""
    x = (np.asarray(price, dtype=np.float64) - lam_min) * (2.0 / (lam_max - lam_min)) - 1.0
    return np.clip(x, -1.0, 1.0)


def time_encoding(t: int) -> np.ndarray:
    """(sin, cos) of the fractional hour of day mapped onto the unit circle."""
    h = (int(t) % DAY_S) / 3600.0
    angle = 2.0 * math.pi * h / 24.0
    return np.array([math.sin(angle), math.cos(angle)])


AMP_EPS = 1e-12  # below this an amplitude counts as zero and its phase is 0


def dft_features(window: np.ndarray) -> np.ndarray:
    """Amplitude and phase of DFT bins 0-2 of ``window``.

    Returns ``[a0, phi0, a1, phi1, a2, phi2]`` with amplitudes ``|X_k| / L``
    (L the window length) and phases in (-pi, pi]; the phase of a (numerically)
    zero coefficient is 0.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise ValueError("empty window")
    bins = np.fft.fft(w)[:3]
    out = np.zeros(6)
    for k in range(min(3, bins.size)):
        amp = abs(bins[k]) / w.size
        out[2 * k] = amp
        out[2 * k + 1] = np.angle(bins[k]) if amp > AMP_EPS else 0.0
    return out


@dataclass(frozen=True)
class Observation:
    """Per-step market observation (15 components).

    Layout of :meth:`vector`: 2 time-encoding values, 6 RT DFT features,
    6 DA DFT features, then the state-of-charge fraction.
    """

    time_enc: np.ndarray
    rt_dft: np.ndarray
    da_dft: np.ndarray
    soc_frac: float

    def vector(self) -> np.ndarray:
        v = np.concatenate([self.time_enc, self.rt_dft, self.da_dft, [self.soc_frac]])
        assert v.shape == (OBS_DIM,)
        return v


def build_observation(series: MarketSeries, t: int, soc_frac: float,
                      lam_min: float = LAMBDA_MIN, lam_max: float = LAMBDA_MAX) -> Observation:
    """Observation at epoch second ``t`` with the given state-of-charge fraction.

    Uses the 72 RT prices and 96 DA prices strictly preceding ``t`` (DA
    counted in whole hours).  Prices are normalized onto [-1, 1] before the
    DFT.  Raises if ``t`` lacks 6 h of RT or 4 days of DA history.
    """
    if not 0.0 <= soc_frac <= 1.0:
        raise ValueError("soc_frac must lie in [0, 1]")
    i = series.rt_index(t)
    j = series.da_index_of_hour(t)
    if i < RT_WINDOW:
        raise SeriesError(f"timestamp {t} has less than 6 h of RT history")
    if j < DA_WINDOW:
        raise SeriesError(f"timestamp {t} has less than 4 days of DA history")
    rt_win = normalize_price(series.rt_price[i - RT_WINDOW:i], lam_min, lam_max)
    da_win = normalize_price(series.da_price[j - DA_WINDOW:j], lam_min, lam_max)
    return Observation(time_encoding(t), dft_features(rt_win), dft_features(da_win), float(soc_frac))


def first_feature_index(series: MarketSeries) -> int:
    """Smallest RT index whose timestamp supports a full observation."""
    for i in range(RT_WINDOW, len(series.rt_ts)):
        j = series.da_index_of_hour(int(series.rt_ts[i]))
        if j >= DA_WINDOW:
            return i
    raise SeriesError("series too short for any observation")


def precompute_market_features(series: MarketSeries, start: int, stop: int,
                               lam_min: float = LAMBDA_MIN, lam_max: float = LAMBDA_MAX) -> np.ndarray:
    """Market part of the observation (first 14 components) for RT indices
    ``start..stop-1``, as one ``(stop-start, 14)`` array.

    Equals ``build_observation(...)`` minus the SoC component at each index;
    used by the environments to avoid recomputing DFTs every step.
    """
    if start < RT_WINDOW:
        raise SeriesError("start index lacks RT history")
    n = stop - start
    feats = np.zeros((n, 14))

    rt_norm = normalize_price(series.rt_price, lam_min, lam_max)
    da_norm = normalize_price(series.da_price, lam_min, lam_max)

    idx = np.arange(start, stop)
    windows = rt_norm[idx[:, None] - RT_WINDOW + np.arange(RT_WINDOW)[None, :]]
    rt_bins = np.fft.fft(windows, axis=1)[:, :3]
    feats[:, 2:8] = _amp_phase(rt_bins, RT_WINDOW)

    # The DA window only advances once per hour; compute per distinct hour.
    hour_of = np.array([series.da_index_of_hour(int(series.rt_ts[i])) for i in idx])
    uniq = np.unique(hour_of)
    if uniq[0] < DA_WINDOW:
        raise SeriesError("start index lacks DA history")
    da_windows = da_norm[uniq[:, None] - DA_WINDOW + np.arange(DA_WINDOW)[None, :]]
    da_bins = np.fft.fft(da_windows, axis=1)[:, :3]
    da_feats = _amp_phase(da_bins, DA_WINDOW)
    lookup = {int(h): k for k, h in enumerate(uniq)}
    feats[:, 8:14] = da_feats[[lookup[int(h)] for h in hour_of]]

    for r, i in enumerate(idx):
        feats[r, 0:2] = time_encoding(int(series.rt_ts[i]))
    return feats


def _amp_phase(bins: np.ndarray, length: int) -> np.ndarray:
    amp = np.abs(bins) / length
    phase = np.where(amp > AMP_EPS, np.angle(bins), 0.0)
    out = np.empty((bins.shape[0], 6))
    out[:, 0::2] = amp
    out[:, 1::2] = phase
    return out
