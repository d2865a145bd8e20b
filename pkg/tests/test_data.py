import numpy as np
import pytest

from fourierlab.data import (
    FormatError, ZScore, gen_sines, gen_step, gen_synthetic_flights, load_dataset1d, load_windows,
    save_dataset1d, save_windows, sines_rule, step_rule, stratified_split,
)
from fourierlab.spectral import band_errors, dft


def test_step_rule():
    assert step_rule(0.7) == 1 and step_rule(0.0) == 0 and step_rule(-0.7) == -1


def test_gen_step_deterministic_and_sorted():
    a, b = gen_step(100, seed=3), gen_step(100, seed=3)
    assert a.xs.tobytes() == b.xs.tobytes()
    assert np.all(np.diff(a.xs) > 0)
    assert set(np.unique(a.ys)) <= {-1.0, 0.0, 1.0}


def test_sines_values():
    assert sines_rule(0.0) == 0.0
    assert sines_rule(np.pi / 2) == pytest.approx(1.0, abs=1e-12)


def test_sines_spectrum_bins():
    ds = gen_sines(256)
    assert ds.is_uniform_grid() and len(ds) == 256
    mags = dft(ds.ys).magnitudes
    top = np.argsort(mags[1:])[::-1][:3] + 1
    assert sorted(top.tolist()) == [1, 3, 5]


def test_dataset1d_round_trip(tmp_path):
    ds = gen_step(20, seed=1)
    save_dataset1d(ds, tmp_path / "s.csv")
    back = load_dataset1d(tmp_path / "s.csv")
    assert back.xs.tobytes() == ds.xs.tobytes() and back.ys.tobytes() == ds.ys.tobytes()


def test_flights_shapes_and_labels():
    ws = gen_synthetic_flights(5, 3, seed=0)
    assert ws.samples.shape == (8, 10, 160)
    assert ws.is_anomaly().tolist() == [False] * 5 + [True] * 3
    assert not gen_synthetic_flights(4, 0, d=2, T=16).is_anomaly().any()


def test_flights_deterministic():
    a = gen_synthetic_flights(3, 2, d=3, T=32, seed=9)
    b = gen_synthetic_flights(3, 2, d=3, T=32, seed=9)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_anomalies_carry_more_high_band_energy():
    ws = gen_synthetic_flights(50, 50, seed=1)
    spec = np.abs(dft(ws.samples).amplitudes) ** 2
    high = spec[..., 160 // 16 + 1:].sum(axis=-1).mean(axis=1)
    assert high[ws.is_anomaly()].mean() > high[~ws.is_anomaly()].mean()
    # a zero prediction leaves the whole signal as error in each band
    lo, hi = band_errors(ws.samples[:2], np.zeros_like(ws.samples[:2]), 10)
    assert np.allclose(lo, 1.0) and np.allclose(hi, 1.0)


def test_windows_round_trip(tmp_path):
    ws = gen_synthetic_flights(3, 2, d=4, T=8, seed=2)
    path = tmp_path / "w.csv"
    save_windows(ws, path)
    back = load_windows(path)
    assert back.samples.tobytes() == ws.samples.tobytes()
    assert back.labels == ws.labels and back.variable_names == ws.variable_names


def test_windows_errors_name_location(tmp_path):
    ws = gen_synthetic_flights(5, 0, d=2, T=6, seed=0)
    path = tmp_path / "w.csv"
    save_windows(ws, path)
    lines = path.read_text().splitlines()
    bad = list(lines)
    row = 3 + 3 * 3  # first channel row of sample 3
    bad[row] = ",".join(bad[row].split(",")[:-1])
    (tmp_path / "bad.csv").write_text("\n".join(bad) + "\n")
    with pytest.raises(FormatError, match="sample 3"):
        load_windows(tmp_path / "bad.csv")
    bad = ["fourierlab-windows,9"] + lines[1:]
    (tmp_path / "v.csv").write_text("\n".join(bad) + "\n")
    with pytest.raises(FormatError, match="version"):
        load_windows(tmp_path / "v.csv")
    (tmp_path / "h.csv").write_text("n,d,T\n")
    with pytest.raises(FormatError, match="line 1"):
        load_windows(tmp_path / "h.csv")


def test_zscore():
    ws = gen_synthetic_flights(20, 0, d=3, T=16, seed=4)
    z = ZScore.fit(ws.samples)
    out = z.transform(ws.samples)
    assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-10)
    assert np.all(np.abs(out.std(axis=(0, 2)) - 1) < 1e-10)
    assert np.max(np.abs(z.inverse_transform(out) - ws.samples)) < 1e-12
    assert ZScore.from_dict(z.to_dict()).transform(ws.samples).tobytes() == out.tobytes()


def test_stratified_split():
    ws = gen_synthetic_flights(20, 10, d=2, T=8, seed=0)
    tr, te = stratified_split(ws, 0.3, seed=1)
    assert te.is_anomaly().sum() == 3 and (~te.is_anomaly()).sum() == 6
    tr2, te2 = stratified_split(ws, 0.3, seed=1)
    assert te.samples.tobytes() == te2.samples.tobytes()
