"""Frequency-band error tracking for spectral-bias (F-Principle) analysis.

The observable is a pair of relative errors per checkpoint: how much of the
target's low-frequency content (DFT bins ``0..k0``) and of its high-frequency
content (bins ``k0+1..N/2``) the model's output still misses. Bands are hard
indicator masks on the one-sided DFT.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

EPS_NUM = 1e-12


@dataclass
class Spectrum:
    """One-sided DFT: complex amplitudes for bins ``0..N//2`` of an ``N``-point signal."""

    n: int
    amplitudes: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.n // 2 + 1)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.amplitudes)

    def energy(self) -> float:
        """Signal energy from the one-sided spectrum (Parseval): ``sum|x|^2``."""
        w = np.full(self.amplitudes.shape[-1], 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * np.abs(self.amplitudes) ** 2) / self.n)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time Cooley-Tukey along the last axis (length 2^k)."""
    n = x.shape[-1]
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(a.shape[:-1] + (n // size, size))
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(a.shape[:-2] + (n,))
        size *= 2
    return a


def _dft_direct(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    k = np.arange(n)
    # reduce k*j mod n before scaling so phases stay accurate for large n
    W = np.exp(-2j * np.pi * ((np.outer(k, k) % n) / n))
    return x.astype(np.complex128) @ W.T


def dft_full(signal) -> np.ndarray:
    """All ``N`` DFT bins along the last axis: radix-2 when ``N`` is a power of two, else direct."""
    x = np.asarray(signal)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"dft needs at least 2 samples, got {n}")
    return _fft_radix2(x) if _is_pow2(n) else _dft_direct(x)


def dft(signal) -> Spectrum:
    x = np.asarray(signal, dtype=np.float64)
    full = dft_full(x)
    n = x.shape[-1]
    return Spectrum(n, full[..., : n // 2 + 1])


def band_masks(n: int, k0: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise ValueError(f"signal length must be >= 2, got {n}")
    if not 1 <= k0 < n / 2:
        raise ValueError(f"k0 must satisfy 1 <= k0 < N/2 = {n / 2}, got {k0}")
    bins = np.arange(n // 2 + 1)
    return bins <= k0, bins > k0


def band_errors(target, prediction, k0: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`band_error` over the leading axes (DFT along the last axis)."""
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise ValueError(f"length mismatch: target {target.shape} vs prediction {prediction.shape}")
    n = target.shape[-1]
    low, high = band_masks(n, k0)
    Y = dft(target).amplitudes
    Yh = dft(prediction).amplitudes
    res = np.abs(Yh - Y) ** 2
    ref = np.abs(Y) ** 2

    def rel(mask):
        return np.sqrt(res[..., mask].sum(-1)) / np.maximum(np.sqrt(ref[..., mask].sum(-1)), EPS_NUM)

    return rel(low), rel(high)


def band_error(target, prediction, k0: int) -> tuple[float, float]:
    """Relative spectral error of ``prediction`` in the low (``k <= k0``) and high band.

    Each band error is ``||Yhat - Y|| / max(||Y||, 1e-12)`` over the band's bins,
    so it is exactly scale-invariant whenever the target band is not empty.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1:
        raise ValueError("band_error expects 1-D sequences; use band_errors for batches")
    lo, hi = band_errors(target, prediction, k0)
    return float(lo), float(hi)


def bin_errors(target, prediction) -> np.ndarray:
    """Per-bin relative error ``|Yhat_k - Y_k| / max(|Y_k|, eps)``, averaged over leading axes."""
    Y = dft(np.asarray(target, dtype=np.float64)).amplitudes
    Yh = dft(np.asarray(prediction, dtype=np.float64)).amplitudes
    err = np.abs(Yh - Y) / np.maximum(np.abs(Y), EPS_NUM)
    return err.reshape(-1, err.shape[-1]).mean(axis=0)


@dataclass
class FrequencyTrace:
    epochs: list
    e_low: list
    e_high: list
    k0: int
    per_variable: dict = field(default_factory=dict)  # name -> (e_low list, e_high list)
    bins: list = field(default_factory=list)  # per-checkpoint per-bin error rows

    def __len__(self):
        return len(self.epochs)

    def first_below(self, band: str, threshold: float):
        """First epoch at which the band error drops below ``threshold`` (``None`` if never)."""
        values = self.e_low if band == "low" else self.e_high
        for epoch, v in zip(self.epochs, values):
            if v < threshold:
                return epoch
        return None


class FrequencyTracer:
    """Accumulates a :class:`FrequencyTrace` one checkpoint at a time.

    Usable as the ``on_checkpoint`` callback of :func:`fourierlab.training.train`
    so that long runs need not keep every snapshot in memory.
    """

    def __init__(self, eval_grid, targets, k0: int, variable_names=None):
        self.eval_grid = eval_grid
        self.targets = np.asarray(targets, dtype=np.float64)
        self.multivariate = self.targets.ndim == 3
        band_masks(self.targets.shape[-1], k0)  # validates k0
        self.trace = FrequencyTrace([], [], [], int(k0))
        if self.multivariate:
            d = self.targets.shape[1]
            names = list(variable_names) if variable_names is not None else [f"var_{i}" for i in range(d)]
            if len(names) != d:
                raise ValueError(f"{len(names)} variable names for {d} channels")
            self.trace.per_variable = {name: ([], []) for name in names}

    def __call__(self, ckpt):
        self.observe(ckpt.epoch, ckpt.build_model())

    def observe(self, epoch: int, model) -> None:
        was_training = model.training
        model.eval()
        pred = np.asarray(model.predict(self.eval_grid), dtype=np.float64)
        model.training = was_training
        trace, targets = self.trace, self.targets
        if self.multivariate:
            if pred.shape != targets.shape:
                raise ValueError(f"checkpoint output {pred.shape} does not match targets {targets.shape}")
            lo, hi = band_errors(targets, pred, trace.k0)  # [n, d]
            lo_var, hi_var = lo.mean(axis=0), hi.mean(axis=0)
            for i, name in enumerate(trace.per_variable):
                trace.per_variable[name][0].append(float(lo_var[i]))
                trace.per_variable[name][1].append(float(hi_var[i]))
            trace.e_low.append(float(lo_var.mean()))
            trace.e_high.append(float(hi_var.mean()))
        else:
            if pred.size != targets.size:
                raise ValueError(f"checkpoint output {pred.shape} does not match targets {targets.shape}")
            pred = pred.reshape(targets.shape)
            lo, hi = band_error(targets, pred, trace.k0)
            trace.e_low.append(lo)
            trace.e_high.append(hi)
        trace.bins.append(bin_errors(targets, pred).tolist())
        trace.epochs.append(int(epoch))


def trace_experiment(checkpoints, eval_grid, targets, k0: int, variable_names=None) -> FrequencyTrace:
    """Band errors of each checkpointed model on a fixed evaluation set.

    ``checkpoints`` is a sequence of objects with ``epoch`` and ``build_model()``
    (see :class:`fourierlab.training.Checkpoint`). For a regression model,
    ``eval_grid`` holds uniform grid inputs and ``targets`` the function values.
    For an autoencoder both are the windowed samples ``[n, d, T]``; the DFT runs
    along time per channel and errors are averaged over samples, then over
    channels for the aggregate trace.
    """
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ValueError("trace_experiment needs at least one checkpoint")
    tracer = FrequencyTracer(eval_grid, targets, k0, variable_names)
    for ckpt in checkpoints:
        tracer(ckpt)
    return tracer.trace


def fmt(v) -> str:
    return "%.17g" % v


def _write_rows(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_trace_csv(trace: FrequencyTrace, path, variable: str | None = None) -> None:
    """One row per checkpoint: ``epoch,k0,e_low,e_high``."""
    lo, hi = (trace.e_low, trace.e_high) if variable is None else trace.per_variable[variable]
    rows = [(e, trace.k0, fmt(a), fmt(b)) for e, a, b in zip(trace.epochs, lo, hi)]
    _write_rows(path, ["epoch", "k0", "e_low", "e_high"], rows)


def export_heatmap(trace_or_matrix, path, epochs=None) -> None:
    """Long-format ``epoch,band,value`` CSV for external heatmap plotting.

    Accepts a :class:`FrequencyTrace` (rows per band ``low``/``high``) or a
    per-frequency error matrix ``[n_checkpoints, n_bins]`` with matching
    ``epochs`` (rows per bin index).
    """
    rows = []
    if isinstance(trace_or_matrix, FrequencyTrace):
        t = trace_or_matrix
        for e, lo, hi in zip(t.epochs, t.e_low, t.e_high):
            rows.append((e, "low", fmt(lo)))
            rows.append((e, "high", fmt(hi)))
    else:
        mat = np.asarray(trace_or_matrix, dtype=np.float64)
        if epochs is None:
            epochs = list(range(mat.shape[0]))
        if len(epochs) != mat.shape[0]:
            raise ValueError("one epoch label per matrix row is required")
        for e, row in zip(epochs, mat):
            for k, v in enumerate(row):
                rows.append((e, k, fmt(v)))
    _write_rows(path, ["epoch", "band", "value"], rows)


def read_heatmap(path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(int(e), b, float(v)) for e, b, v in r]
