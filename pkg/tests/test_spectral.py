import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourierlab.models import ModelConfig, build_model
from fourierlab.rng import Rng
from fourierlab.spectral import (
    FrequencyTrace, band_error, band_errors, dft, dft_full, export_heatmap, read_heatmap, trace_experiment,
    write_trace_csv,
)
from fourierlab.training import Checkpoint

SIZES = list(range(2, 65)) + [128, 160, 256]


def naive_dft(x):
    """Double-loop oracle straight from the definition."""
    n = len(x)
    return np.array([sum(x[j] * cmath.exp(-2j * math.pi * k * j / n) for j in range(n)) for k in range(n)])


@pytest.mark.parametrize("n", SIZES)
def test_fast_path_matches_naive(n):
    x = Rng(n).normal(n)
    assert np.max(np.abs(dft_full(x) - naive_dft(x))) < 1e-9


def test_constant_signal():
    s = dft(np.full(16, 2.5))
    assert s.amplitudes[0] == pytest.approx(16 * 2.5)
    assert np.all(np.abs(s.amplitudes[1:]) < 1e-12)


def test_single_sine_bin():
    n = 64
    s = dft(np.sin(2 * np.pi * np.arange(n) / n))
    mags = s.magnitudes
    assert mags[1] == pytest.approx(n / 2)
    assert np.all(np.delete(mags, 1) < 1e-9)


def test_too_short():
    with pytest.raises(ValueError):
        dft([1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(0, 10_000))
def test_parseval(n, seed):
    x = Rng(seed).normal(n)
    full = dft_full(x)
    assert abs(np.sum(np.abs(full) ** 2) / n - np.sum(x ** 2)) <= 1e-9 * np.sum(x ** 2)
    assert abs(dft(x).energy() - np.sum(x ** 2)) <= 1e-9 * np.sum(x ** 2)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(SIZES), st.floats(-3, 3), st.integers(0, 10_000))
def test_linearity(n, a, seed):
    rng = Rng(seed)
    x, y = rng.normal(n), rng.normal(n)
    assert np.max(np.abs(dft_full(a * x + y) - (a * dft_full(x) + dft_full(y)))) < 1e-9


def test_band_error_examples():
    n = 64
    t = np.arange(n)
    low = np.sin(2 * np.pi * t / n)
    target = low + np.sin(2 * np.pi * 5 * t / n)
    assert band_error(target, target, 2) == (0.0, 0.0)
    lo, hi = band_error(target, low, 2)
    assert lo < 1e-9 and hi == pytest.approx(1.0, abs=1e-9)
    lo, hi = band_error(target, np.zeros(n), 2)
    assert lo == pytest.approx(1.0, abs=1e-9) and hi == pytest.approx(1.0, abs=1e-9)


def test_band_error_validation():
    with pytest.raises(ValueError):
        band_error(np.zeros(8), np.zeros(7), 2)
    for k0 in (0, 4, 5):
        with pytest.raises(ValueError):
            band_error(np.zeros(8), np.zeros(8), k0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100) | st.floats(-100, -0.01), st.integers(0, 10_000))
def test_band_error_scale_invariant(c, seed):
    rng = Rng(seed)
    y, p = rng.normal(32), rng.normal(32)
    a = band_error(y, p, 4)
    b = band_error(c * y, c * p, 4)
    assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-12


def test_band_errors_vectorized_matches_scalar():
    rng = Rng(0)
    y, p = rng.normal((3, 4, 32)), rng.normal((3, 4, 32))
    lo, hi = band_errors(y, p, 3)
    assert lo.shape == (3, 4)
    assert (lo[1, 2], hi[1, 2]) == pytest.approx(band_error(y[1, 2], p[1, 2], 3), rel=1e-14)


def _ckpt(model, epoch):
    return Checkpoint(model.config, model.param_vector(), epoch, 0)


def test_trace_of_exact_model_is_zero():
    cfg = ModelConfig(kind="mlp", input_channels=1, hidden=[])
    model = build_model(cfg, seed=0)
    net = model.net.layers[-1]
    net.params["W"][...] = 2.0
    net.params["b"][...] = 0.5
    xs = np.linspace(-1, 1, 32, endpoint=False)
    trace = trace_experiment([_ckpt(model, 0)], xs[:, None], 2 * xs + 0.5, 2)
    assert trace.e_low == [0.0] and trace.e_high == [0.0]


def test_trace_length_and_per_variable():
    cfg = ModelConfig(kind="ae", input_channels=3, time_steps=16, latent_dim=2,
                      encoder=[{"type": "conv", "channels": 2, "kernel": 3, "stride": 2}])
    cks = [_ckpt(build_model(cfg, seed=s), e) for s, e in enumerate([0, 5, 10])]
    x = Rng(0).normal((4, 3, 16))
    trace = trace_experiment(cks, x, x, 1, ["a", "b", "c"])
    assert len(trace) == 3 and trace.epochs == [0, 5, 10]
    assert set(trace.per_variable) == {"a", "b", "c"}
    assert all(len(v[0]) == 3 for v in trace.per_variable.values())
    assert np.asarray(trace.bins).shape == (3, 9)


def test_first_below():
    tr = FrequencyTrace([0, 10, 20], [0.9, 0.1, 0.05], [1.0, 0.5, 0.1], 2)
    assert tr.first_below("low", 0.2) == 10
    assert tr.first_below("high", 0.2) == 20
    assert tr.first_below("high", 0.01) is None


def test_heatmap_rows_bytes_and_precision(tmp_path):
    tr = FrequencyTrace([0, 10], [1 / 3, 0.1], [2 / 3, 0.7], 2)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    export_heatmap(tr, p1)
    export_heatmap(tr, p2)
    assert p1.read_bytes() == p2.read_bytes()
    rows = read_heatmap(p1)
    assert len(rows) == 4
    assert rows[0] == (0, "low", 1 / 3) and rows[1] == (0, "high", 2 / 3)
    export_heatmap(np.array([[0.1, 0.2, 0.3]]), p2, epochs=[7])
    assert [r[2] for r in read_heatmap(p2)] == [0.1, 0.2, 0.3]


def test_trace_csv(tmp_path):
    tr = FrequencyTrace([0, 10], [0.5, 0.25], [1.0, 0.75], 2)
    path = tmp_path / "t.csv"
    write_trace_csv(tr, path)
    assert path.read_text() == "epoch,k0,e_low,e_high\n0,2,0.5,1\n10,2,0.25,0.75\n"
