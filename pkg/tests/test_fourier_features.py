import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourierlab.fourier_features import fourier_map, gaussian_kernel, init_fourier, kernel_estimate
from fourierlab.nn_core import ShapeError, grad_check
from fourierlab.rng import Rng


def expected_kernel(r, sigma):
    # characteristic function of N(0, sigma^2 I) at 2*pi*delta
    return np.exp(-2 * np.pi ** 2 * sigma ** 2 * r ** 2)


def test_same_seed_same_B_and_trainable_flag_does_not_change_draw():
    a = init_fourier(3, 16, 1.0, seed=5)
    b = init_fourier(3, 16, 1.0, seed=5)
    c = init_fourier(3, 16, 1.0, trainable=True, seed=5)
    assert a.params["B"].tobytes() == b.params["B"].tobytes() == c.params["B"].tobytes()
    assert a.frozen and not c.frozen


def test_B_sample_mean_lln():
    sigma = 2.0
    B = init_fourier(1000, 1000, sigma, seed=0).params["B"]
    assert B.size == 10 ** 6
    assert abs(B.mean()) < 4 * sigma / 1000
    assert abs(B.std() - sigma) < 4 * sigma / 1000


@pytest.mark.parametrize("args", [(0, 4, 1.0), (3, 0, 1.0), (3, 4, 0.0), (3, 4, -1.0)])
def test_invalid_dims_or_scale(args):
    with pytest.raises(ValueError):
        init_fourier(*args)


def test_zero_input():
    m = 8
    layer = init_fourier(3, m, seed=1)
    g = fourier_map(layer, np.zeros(3))
    np.testing.assert_allclose(g[:m], 1 / np.sqrt(m), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(g[m:], 0.0)


def test_time_series_columns():
    layer = init_fourier(2, 5, seed=2)
    x = Rng(0).normal((2, 3))
    out = fourier_map(layer, x)
    assert out.shape == (10, 3)
    for t in range(3):
        np.testing.assert_allclose(out[:, t], fourier_map(layer, x[:, t]), atol=1e-15)


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        fourier_map(init_fourier(3, 4), np.zeros(2))


def test_kernel_of_point_with_itself_is_one():
    layer = init_fourier(3, 64, seed=3)
    x = Rng(1).normal(3)
    assert kernel_estimate(layer, x, x) == pytest.approx(1.0, abs=1e-14)


def test_monte_carlo_kernel_oracle():
    x = np.zeros(3)
    for r, tol in [(0.1, 0.05), (10.0, 0.05)]:
        xp = np.array([r, 0.0, 0.0])
        est = np.mean([kernel_estimate(init_fourier(3, 4096, 1.0, seed=s), x, xp) for s in range(20)])
        assert abs(est - expected_kernel(r, 1.0)) < tol
        assert gaussian_kernel(x, xp, 1.0) == pytest.approx(expected_kernel(r, 1.0))


def test_monte_carlo_error_shrinks_like_inverse_sqrt():
    # rms error of the estimate vs total feature count on a log-log fit: slope near -1/2
    x, xp = np.zeros(2), np.array([0.1, 0.05])
    truth = expected_kernel(np.linalg.norm(xp), 1.0)
    ms = [16, 64, 256, 1024]
    rms = []
    for m in ms:
        errs = [kernel_estimate(init_fourier(2, m, 1.0, seed=1000 * m + s), x, xp) - truth for s in range(200)]
        rms.append(np.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log(ms), np.log(rms), 1)[0]
    assert -1.0 < slope < -0.25


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 32), st.integers(0, 10_000))
def test_norm_is_amplitude_and_entries_bounded(d, m, seed):
    rng = Rng(seed)
    layer = init_fourier(d, m, 3.0, seed=seed)
    g = fourier_map(layer, rng.normal(d) * 5)
    assert abs(g @ g - 1.0) < 1e-12
    assert np.all(np.abs(g) <= 1 / np.sqrt(m) + 1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_shift_structure(d, seed):
    rng = Rng(seed)
    layer = init_fourier(d, 16, 1.0, seed=seed)
    x, xp, delta = rng.normal(d), rng.normal(d), rng.normal(d)
    assert abs(kernel_estimate(layer, x, xp) - kernel_estimate(layer, x + delta, xp + delta)) < 1e-10


def test_trainable_B_grad_check():
    rng = Rng(4)
    layer = init_fourier(3, 6, 1.0, trainable=True, seed=4)
    assert grad_check(layer, rng.normal((2, 3))) < 1e-5
    assert grad_check(layer, rng.normal((2, 3, 5))) < 1e-5
    assert "B" in layer.grads


def test_frozen_B_has_no_trainable_params():
    layer = init_fourier(3, 6, seed=4)
    layer.forward(np.ones((2, 3)))
    layer.backward(np.ones((2, 12)))
    assert layer.trainable() == {}
