"""Random and trainable Fourier feature precursor layers.

The layer maps each input vector ``x`` (``d`` channels) to::

    [a cos(2 pi B x); a sin(2 pi B x)]          (2m outputs)

optionally scaled by ``1/sqrt(m)``. For time-series input ``[batch, d, T]``
the map is applied independently at every time step, which is the same as a
pair of kernel-size-1 convolutions sharing the weight matrix ``B`` followed
by cosine and sine activations and a channel concatenation.

With ``trainable=False`` (random features) ``B`` is frozen after sampling; with
``trainable=True`` it is updated by the optimizer like any other weight. The
amplitude ``a`` is a fixed constant in both modes.
"""

from __future__ import annotations

import numpy as np

from .nn_core import DTYPE, Layer, ShapeError
from .rng import Rng

NORMALIZATIONS = ("none", "inv_sqrt_m")


class FourierFeatures(Layer):
    kind = "fourier"

    def __init__(self, B: np.ndarray, trainable: bool = False, amplitude: float = 1.0,
                 normalization: str = "inv_sqrt_m", scale: float | None = None):
        super().__init__()
        B = np.array(B, dtype=DTYPE)
        if B.ndim != 2 or B.shape[0] < 1 or B.shape[1] < 1:
            raise ShapeError(f"frequency matrix must be [m, d] with m, d >= 1, got {B.shape}")
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
        self.params = {"B": B}
        self.trainable_B = bool(trainable)
        if not self.trainable_B:
            self.frozen = {"B"}
        self.amplitude = float(amplitude)
        self.normalization = normalization
        self.scale = scale

    @property
    def m(self) -> int:
        return self.params["B"].shape[0]

    @property
    def d(self) -> int:
        return self.params["B"].shape[1]

    @property
    def out_features(self) -> int:
        return 2 * self.m

    def _gain(self) -> float:
        if self.normalization == "inv_sqrt_m":
            return self.amplitude / np.sqrt(self.m)
        return self.amplitude

    def forward(self, x):
        x = self._enter(x)
        if x.ndim < 2 or x.shape[1] != self.d:
            raise ShapeError(f"fourier: expected {self.d} channels on axis 1, got shape {x.shape}")
        xt = np.moveaxis(x, 1, -1)  # [..., d]
        phase = 2.0 * np.pi * (xt @ self.params["B"].T)  # [..., m]
        c, s = np.cos(phase), np.sin(phase)
        g = self._gain()
        out = np.concatenate([g * c, g * s], axis=-1)
        self._cache = (xt, c, s, out.shape)
        return np.moveaxis(out, -1, 1)

    def backward(self, grad):
        xt, c, s, out_shape = self._cached()
        grad = np.moveaxis(np.asarray(grad, dtype=DTYPE), 1, -1)
        if grad.shape != out_shape:
            raise ShapeError(f"fourier: upstream gradient shape mismatch {grad.shape} != {out_shape}")
        m = self.m
        gc, gs = grad[..., :m], grad[..., m:]
        dphase = 2.0 * np.pi * self._gain() * (gs * c - gc * s)  # d/d(B x)
        if self.trainable_B:
            self.grads = {"B": dphase.reshape(-1, m).T @ xt.reshape(-1, self.d)}
        else:
            self.grads = {}
        dx = dphase @ self.params["B"]
        return np.moveaxis(dx, -1, 1)

    def __repr__(self):
        mode = "trainable" if self.trainable_B else "random"
        return f"FourierFeatures(d={self.d}, m={self.m}, {mode}, norm={self.normalization})"


def init_fourier(d: int, m: int, sigma: float = 1.0, trainable: bool = False, seed=0,
                 normalization: str = "inv_sqrt_m") -> FourierFeatures:
    """Sample ``B`` with i.i.d. ``N(0, sigma^2)`` entries from a seeded :class:`Rng`.

    ``seed`` may also be an existing :class:`Rng`, in which case it is advanced.
    The draw does not depend on ``trainable``.
    """
    if int(d) < 1 or int(m) < 1:
        raise ValueError(f"fourier layer needs d >= 1 and m >= 1, got d={d}, m={m}")
    if not sigma > 0:
        raise ValueError(f"fourier scale must be positive, got {sigma}")
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    B = rng.normal((int(m), int(d)), scale=float(sigma))
    return FourierFeatures(B, trainable=trainable, normalization=normalization, scale=float(sigma))


def fourier_map(layer: FourierFeatures, x) -> np.ndarray:
    """Apply the map to one unbatched input: ``[d] -> [2m]`` or ``[d, T] -> [2m, T]``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim not in (1, 2):
        raise ShapeError(f"fourier_map expects [d] or [d, T], got shape {x.shape}")
    return layer.forward(x[None])[0]


def kernel_estimate(layer: FourierFeatures, x, x_prime) -> float:
    """Inner product of the two feature vectors; estimates a Gaussian kernel.

    For ``B ~ N(0, sigma^2)`` the expectation is ``exp(-2 pi^2 sigma^2 |x - x'|^2)``.
    """
    if layer.normalization != "inv_sqrt_m":
        raise ValueError("kernel_estimate requires inv_sqrt_m normalization")
    return float(fourier_map(layer, x) @ fourier_map(layer, x_prime))


def gaussian_kernel(x, x_prime, sigma: float = 1.0) -> float:
    diff = np.asarray(x, dtype=DTYPE) - np.asarray(x_prime, dtype=DTYPE)
    return float(np.exp(-2.0 * np.pi ** 2 * sigma ** 2 * float(diff @ diff)))
