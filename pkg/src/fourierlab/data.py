"""Benchmark generators, a synthetic multivariate anomaly set, and window I/O.

Windowed series file format (text, one file per set)::

    fourierlab-windows,1          magic and format version
    n,d,T                         sample count, channels, time steps
    name_0,...,name_{d-1}         variable names
    <d rows of T comma-separated values>     sample 0
    label,<name>                  label of sample 0 (empty name = unlabeled)
    ...                           repeated for every sample

Values are written with 17 significant digits, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

NOMINAL = "nominal"
ANOMALY = "anomaly"
WINDOWS_MAGIC = "fourierlab-windows"
WINDOWS_VERSION = 1


class FormatError(ValueError):
    """Malformed data file; the message names the line (and sample) at fault."""


@dataclass
class Dataset1D:
    xs: np.ndarray
    ys: np.ndarray
    domain: tuple

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.xs.shape != self.ys.shape or self.xs.ndim != 1:
            raise ValueError("xs and ys must be 1-D sequences of equal length")

    def __len__(self):
        return len(self.xs)

    def is_uniform_grid(self, tol=1e-9) -> bool:
        steps = np.diff(self.xs)
        return len(steps) > 0 and bool(np.all(steps > 0)) and np.ptp(steps) <= tol * max(1.0, abs(steps[0]))


def step_rule(x):
    """Two-step staircase: -1 below -0.5, 1 above 0.5, 0 in between."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < -0.5, -1.0, np.where(x > 0.5, 1.0, 0.0))


def gen_step(n: int, seed=0) -> Dataset1D:
    """``n`` points drawn uniformly on [-1, 1] (returned sorted) with staircase targets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    xs = np.sort(rng.uniform(-1.0, 1.0, size=int(n)))
    return Dataset1D(xs, step_rule(xs), (-1.0, 1.0))


def sines_rule(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(x) + np.sin(3 * x) + np.sin(5 * x)


def gen_sines(n: int, domain=(-np.pi, np.pi)) -> Dataset1D:
    """Uniform grid of ``n`` points on ``[lo, hi)`` with ``y = sin x + sin 3x + sin 5x``.

    The right endpoint is excluded so that, on the default domain, the DFT of
    ``ys`` puts the three components exactly on bins 1, 3 and 5.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    lo, hi = float(domain[0]), float(domain[1])
    xs = lo + (hi - lo) * np.arange(int(n)) / int(n)
    return Dataset1D(xs, sines_rule(xs), (lo, hi))


def save_dataset1d(ds: Dataset1D, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y"])
    for x, y in zip(ds.xs, ds.ys):
        w.writerow(["%.17g" % x, "%.17g" % y])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def load_dataset1d(path) -> Dataset1D:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y"]:
        raise FormatError(f"{path}: line 1: expected header 'x,y'")
    xs, ys = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 2 values, got {len(row)}")
        try:
            xs.append(float(row[0]))
            ys.append(float(row[1]))
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
    xs = np.array(xs)
    return Dataset1D(xs, np.array(ys), (float(xs.min()), float(xs.max())) if len(xs) else (0.0, 0.0))


@dataclass
class WindowedSeriesSet:
    samples: np.ndarray  # [n, d, T]
    variable_names: list
    labels: list = None  # per-sample label names, or None when unlabeled
    label_names: tuple = (NOMINAL, ANOMALY)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 3 or min(self.samples.shape) < 1:
            raise ValueError(f"samples must be [n, d, T] with n, d, T >= 1, got {self.samples.shape}")
        n, d, _ = self.samples.shape
        self.variable_names = list(self.variable_names)
        if len(self.variable_names) != d:
            raise ValueError(f"{len(self.variable_names)} variable names for {d} channels")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} samples")

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def d(self):
        return self.samples.shape[1]

    @property
    def T(self):
        return self.samples.shape[2]

    @property
    def labeled(self) -> bool:
        return self.labels is not None and all(lab for lab in self.labels)

    def is_anomaly(self) -> np.ndarray:
        if not self.labeled:
            raise ValueError("labels required")
        return np.array([lab == ANOMALY for lab in self.labels])

    def subset(self, idx) -> "WindowedSeriesSet":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return WindowedSeriesSet(self.samples[idx], self.variable_names, labels, self.label_names)


def _smooth_component(rng: Rng, T: int, n_terms: int, fmin: float, fmax: float) -> np.ndarray:
    t = np.arange(T) / T
    out = np.zeros(T)
    for _ in range(n_terms):
        f = rng.uniform(fmin, fmax)
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        out += amp * np.sin(2 * np.pi * f * t + phase)
    return out


def gen_synthetic_flights(n_nominal: int, n_anomaly: int, d: int = 10, T: int = 160, seed=0,
                          n_factors: int = 3, noise: float = 0.05, burst_amplitude: float = 1.5,
                          burst_cycles=(14.0, 24.0), burst_width: int = 32) -> WindowedSeriesSet:
    """Desk-scale stand-in for multivariate flight windows.

    Every sample is a set of ``d`` sensor channels driven by ``n_factors``
    shared smooth signals (sums of sinusoids with 0.5 to 2.5 cycles per window)
    through a fixed random mixing matrix, plus small white noise. Anomalous
    samples additionally carry a Hann-windowed high-frequency burst on 1 to 3
    randomly chosen channels (at most ``d``). Nominal samples come first, then anomalies.
    """
    if n_nominal < 0 or n_anomaly < 0:
        raise ValueError("sample counts must be nonnegative")
    if n_nominal + n_anomaly < 1:
        raise ValueError("at least one sample is required")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    mixing = rng.normal((d, n_factors), scale=1.0 / np.sqrt(n_factors))
    offsets = rng.uniform(-0.5, 0.5, size=d)
    n = n_nominal + n_anomaly
    samples = np.empty((n, d, T))
    t = np.arange(T)
    for i in range(n):
        factors = np.stack([_smooth_component(rng, T, 2, 0.5, 2.5) for _ in range(n_factors)])
        x = mixing @ factors + offsets[:, None] + rng.normal((d, T), scale=noise)
        if i >= n_nominal:
            k = int(rng.integers(1, min(3, d) + 1))
            channels = rng.choice(d, size=k, replace=False)
            width = min(int(burst_width), T)
            start = int(rng.integers(0, T - width + 1))
            window = np.zeros(T)
            window[start:start + width] = np.hanning(width)
            for c in channels:
                cycles = rng.uniform(*burst_cycles)
                phase = rng.uniform(0.0, 2 * np.pi)
                x[c] += burst_amplitude * window * np.sin(2 * np.pi * cycles * t / T + phase)
        samples[i] = x
    labels = [NOMINAL] * n_nominal + [ANOMALY] * n_anomaly
    return WindowedSeriesSet(samples, [f"var_{j}" for j in range(d)], labels)


def save_windows(ws: WindowedSeriesSet, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([WINDOWS_MAGIC, WINDOWS_VERSION])
    w.writerow([ws.n, ws.d, ws.T])
    w.writerow(ws.variable_names)
    for i in range(ws.n):
        for row in ws.samples[i]:
            w.writerow(["%.17g" % v for v in row])
        w.writerow(["label", "" if ws.labels is None else ws.labels[i]])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def load_windows(path) -> WindowedSeriesSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 2 or rows[0][0] != WINDOWS_MAGIC:
        raise FormatError(f"{path}: line 1: missing '{WINDOWS_MAGIC},<version>' header")
    if rows[0][1] != str(WINDOWS_VERSION):
        raise FormatError(f"{path}: line 1: unknown format version {rows[0][1]!r}")
    try:
        n, d, T = (int(v) for v in rows[1])
    except (IndexError, ValueError):
        raise FormatError(f"{path}: line 2: expected 'n,d,T' integers") from None
    if min(n, d, T) < 1:
        raise FormatError(f"{path}: line 2: n, d, T must be >= 1")
    if len(rows) < 3 or len(rows[2]) != d:
        raise FormatError(f"{path}: line 3: expected {d} variable names")
    names = rows[2]
    expected = 3 + n * (d + 1)
    samples = np.empty((n, d, T))
    labels = []
    line = 3
    for i in range(n):
        for c in range(d):
            if line >= len(rows):
                raise FormatError(f"{path}: sample {i}: file ends at line {line} (expected {expected} lines)")
            row = rows[line]
            if len(row) != T:
                raise FormatError(
                    f"{path}: line {line + 1}: sample {i}, channel {c}: expected T={T} values, got {len(row)}"
                )
            try:
                samples[i, c] = [float(v) for v in row]
            except ValueError as exc:
                raise FormatError(f"{path}: line {line + 1}: sample {i}: {exc}") from None
            line += 1
        if line >= len(rows) or len(rows[line]) != 2 or rows[line][0] != "label":
            raise FormatError(f"{path}: line {line + 1}: sample {i}: expected 'label,<name>' line")
        labels.append(rows[line][1])
        line += 1
    if line != len(rows):
        raise FormatError(f"{path}: line {line + 1}: trailing content after {n} samples")
    if all(lab == "" for lab in labels):
        labels = None
    elif any(lab == "" for lab in labels):
        raise FormatError(f"{path}: labels must be given for all samples or none")
    return WindowedSeriesSet(samples, names, labels)


@dataclass
class ZScore:
    """Per-channel standardization with stored statistics."""

    means: np.ndarray = field(default=None)
    stds: np.ndarray = field(default=None)

    @classmethod
    def fit(cls, samples) -> "ZScore":
        x = np.asarray(samples, dtype=np.float64)
        means = x.mean(axis=(0, 2))
        stds = x.std(axis=(0, 2))
        stds = np.where(stds > 0, stds, 1.0)
        return cls(means, stds)

    def transform(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        return (x - self.means[None, :, None]) / self.stds[None, :, None]

    def inverse_transform(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        return x * self.stds[None, :, None] + self.means[None, :, None]

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, data) -> "ZScore":
        return cls(np.asarray(data["means"], dtype=np.float64), np.asarray(data["stds"], dtype=np.float64))


def stratified_split(ws: WindowedSeriesSet, test_fraction: float, seed=0):
    """Seeded split that keeps each label's proportion in both parts."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    labels = ws.labels if ws.labels is not None else [""] * ws.n
    train_idx, test_idx = [], []
    for lab in sorted(set(labels)):
        idx = np.array([i for i, v in enumerate(labels) if v == lab])
        idx = idx[rng.permutation(len(idx))]
        k = int(round(test_fraction * len(idx)))
        test_idx.extend(idx[:k].tolist())
        train_idx.extend(idx[k:].tolist())
    return ws.subset(sorted(train_idx)), ws.subset(sorted(test_idx))
