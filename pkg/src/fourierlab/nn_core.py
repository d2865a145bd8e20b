"""Dense float64 layers with hand-derived backward passes.

Every layer follows the same small protocol:

* ``forward(x)`` returns the output and caches whatever ``backward`` needs;
* ``backward(grad)`` takes the upstream gradient (same shape as the forward
  output), stores parameter gradients in ``layer.grads`` and returns the
  gradient with respect to the input;
* ``params`` maps parameter names to arrays; names listed in ``frozen`` are
  carried and serialized but never receive gradients.

Layers operate on batched inputs. Dense acts on the last axis, convolutions
expect ``[batch, channels, time]`` and the Fourier layer (see
:mod:`fourierlab.fourier_features`) treats axis 1 as the channel axis.

Setting ``FOURIERLAB_CHECKED=1`` in the environment (or assigning
``nn_core.CHECKED = True``) makes tensor construction and every forward
pass reject NaN/Inf.
"""

from __future__ import annotations

import os

import numpy as np

from .rng import Rng

CHECKED = os.environ.get("FOURIERLAB_CHECKED", "0") not in ("", "0", "false", "no")

DTYPE = np.float64


class ShapeError(ValueError):
    """Input does not match the shape a layer or model expects."""


class StateError(RuntimeError):
    """Layer used out of order, e.g. backward before forward."""


class NonFiniteError(ValueError):
    """A tensor contains NaN or Inf."""


def check_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{what} contains {bad} non-finite value(s)")


def as_tensor(values, shape=None, checked: bool | None = None) -> np.ndarray:
    """Build a contiguous float64 array, optionally reshaping from flat row-major values."""
    arr = np.array(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"dimension sizes must be positive, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if CHECKED if checked is None else checked:
        check_finite(arr)
    return np.ascontiguousarray(arr)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.frozen: set[str] = set()
        self._cache = None

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k not in self.frozen}

    def _enter(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if CHECKED:
            check_finite(x, f"input to {self.kind}")
        return x

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}.backward called before forward")
        return self._cache

    def _check_upstream(self, grad, out_shape):
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != tuple(out_shape):
            raise ShapeError(
                f"{self.kind}: upstream gradient shape {grad.shape} != output shape {tuple(out_shape)}"
            )
        return grad

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


def _xavier(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(shape, scale=np.sqrt(2.0 / (fan_in + fan_out)))


class Dense(Layer):
    """``y = x @ W.T + b`` over the last axis; ``W`` has shape ``[out, in]``."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, rng: Rng | None = None):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if rng is None:
            W = np.zeros((self.out_features, self.in_features))
        else:
            W = _xavier(rng, (self.out_features, self.in_features), self.in_features, self.out_features)
        self.params = {"W": W, "b": np.zeros(self.out_features)}

    def forward(self, x):
        x = self._enter(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"dense: expected last dimension {self.in_features}, got shape {x.shape}")
        y = x @ self.params["W"].T + self.params["b"]
        self._cache = (x, y.shape)
        return y

    def backward(self, grad):
        x, out_shape = self._cached()
        grad = self._check_upstream(grad, out_shape)
        g2 = grad.reshape(-1, self.out_features)
        x2 = x.reshape(-1, self.in_features)
        self.grads = {"W": g2.T @ x2, "b": g2.sum(axis=0)}
        return grad @ self.params["W"]


def conv_output_length(T: int, kernel: int, stride: int, padding: int) -> int:
    return (T + 2 * padding - kernel) // stride + 1


def _conv_forward(x, W, stride, padding):
    # x [B, C, T], W [O, C, k] -> [B, O, T_out]
    B, C, T = x.shape
    O, _, k = W.shape
    T_out = conv_output_length(T, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    span = stride * (T_out - 1) + 1
    cols = np.stack([xp[:, :, j:j + span:stride] for j in range(k)], axis=-1)  # [B, C, T_out, k]
    cols = cols.transpose(0, 2, 1, 3).reshape(B, T_out, C * k)
    y = cols @ W.reshape(O, C * k).T  # [B, T_out, O]
    return y.transpose(0, 2, 1), cols


def _conv_input_grad(g, W, stride, padding, T):
    # adjoint of _conv_forward w.r.t. x; g [B, O, T_out] -> [B, C, T]
    B, O, T_out = g.shape
    _, C, k = W.shape
    dcols = (g.transpose(0, 2, 1) @ W.reshape(O, C * k)).reshape(B, T_out, C, k)
    dxp = np.zeros((B, C, T + 2 * padding))
    span = stride * (T_out - 1) + 1
    for j in range(k):
        dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dxp[:, :, padding:padding + T]


def _conv_weight_grad(g, cols, C, k):
    # g [B, O, T_out], cols [B, T_out, C*k] -> [O, C, k]
    O = g.shape[1]
    gw = np.tensordot(g, cols, axes=([0, 2], [0, 1]))
    return gw.reshape(O, C, k)


def _as_batched_series(x, kind):
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ShapeError(f"{kind}: expected [batch, channels, time] or [channels, time], got shape {x.shape}")
    return x, False


class Conv1d(Layer):
    """1-D cross-correlation with zero padding; kernels have shape ``[out_ch, in_ch, k]``."""

    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, rng: Rng | None = None):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ValueError("conv1d needs kernel_size >= 1, stride >= 1, padding >= 0")
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.kernel_size, self.stride, self.padding = int(kernel_size), int(stride), int(padding)
        shape = (self.out_channels, self.in_channels, self.kernel_size)
        if rng is None:
            K = np.zeros(shape)
        else:
            K = _xavier(rng, shape, self.in_channels * self.kernel_size, self.out_channels * self.kernel_size)
        self.params = {"kernels": K, "bias": np.zeros(self.out_channels)}

    def output_length(self, T: int) -> int:
        return conv_output_length(T, self.kernel_size, self.stride, self.padding)

    def forward(self, x):
        x = self._enter(x)
        x, squeeze = _as_batched_series(x, self.kind)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"conv1d: expected {self.in_channels} input channels, got {x.shape[1]}")
        if self.output_length(x.shape[2]) < 1:
            raise ShapeError(f"conv1d: input length {x.shape[2]} too short for kernel {self.kernel_size}")
        y, cols = _conv_forward(x, self.params["kernels"], self.stride, self.padding)
        y = y + self.params["bias"][None, :, None]
        self._cache = (cols, x.shape[2], squeeze, y.shape)
        return y[0] if squeeze else y

    def backward(self, grad):
        cols, T, squeeze, out_shape = self._cached()
        grad = self._check_upstream(grad[None] if squeeze else grad, out_shape)
        K = self.params["kernels"]
        self.grads = {
            "kernels": _conv_weight_grad(grad, cols, self.in_channels, self.kernel_size),
            "bias": grad.sum(axis=(0, 2)),
        }
        dx = _conv_input_grad(grad, K, self.stride, self.padding, T)
        return dx[0] if squeeze else dx


class ConvTranspose1d(Layer):
    """Transposed 1-D convolution: the exact adjoint of :class:`Conv1d`.

    Kernels have shape ``[in_ch, out_ch, k]`` (the forward convolution they
    transpose maps ``out_ch -> in_ch``). Output length is
    ``(L - 1) * stride - 2 * padding + k + output_padding``.
    """

    kind = "conv_transpose1d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 output_padding=0, rng: Rng | None = None):
        super().__init__()
        if kernel_size < 1 or stride < 1 or padding < 0:
            raise ValueError("conv_transpose1d needs kernel_size >= 1, stride >= 1, padding >= 0")
        if not 0 <= output_padding < stride:
            raise ValueError("output_padding must lie in [0, stride)")
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self.kernel_size, self.stride, self.padding = int(kernel_size), int(stride), int(padding)
        self.output_padding = int(output_padding)
        shape = (self.in_channels, self.out_channels, self.kernel_size)
        if rng is None:
            K = np.zeros(shape)
        else:
            K = _xavier(rng, shape, self.in_channels * self.kernel_size, self.out_channels * self.kernel_size)
        self.params = {"kernels": K, "bias": np.zeros(self.out_channels)}

    def output_length(self, L: int) -> int:
        return (L - 1) * self.stride - 2 * self.padding + self.kernel_size + self.output_padding

    def forward(self, x):
        x = self._enter(x)
        x, squeeze = _as_batched_series(x, self.kind)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"conv_transpose1d: expected {self.in_channels} input channels, got {x.shape[1]}")
        T = self.output_length(x.shape[2])
        if T < 1:
            raise ShapeError(f"conv_transpose1d: non-positive output length for input length {x.shape[2]}")
        y = _conv_input_grad(x, self.params["kernels"], self.stride, self.padding, T)
        y = y + self.params["bias"][None, :, None]
        self._cache = (x, T, squeeze, y.shape)
        return y[0] if squeeze else y

    def backward(self, grad):
        x, T, squeeze, out_shape = self._cached()
        grad = self._check_upstream(grad[None] if squeeze else grad, out_shape)
        K = self.params["kernels"]
        dx, gcols = _conv_forward(grad, K, self.stride, self.padding)
        self.grads = {
            "kernels": _conv_weight_grad(x, gcols, self.out_channels, self.kernel_size),
            "bias": grad.sum(axis=(0, 2)),
        }
        return dx[0] if squeeze else dx


_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(DTYPE)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sine": (np.sin, lambda x, y: np.cos(x)),
    "cosine": (np.cos, lambda x, y: -np.sin(x)),
    "identity": (lambda x: x.copy(), lambda x, y: np.ones_like(x)),
}


class Activation(Layer):
    kind = "activation"

    def __init__(self, kind: str):
        super().__init__()
        if kind not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}")
        self.name = kind
        self._f, self._df = _ACTIVATIONS[kind]

    def forward(self, x):
        x = self._enter(x)
        y = self._f(x)
        self._cache = (x, y)
        return y

    def backward(self, grad):
        x, y = self._cached()
        grad = self._check_upstream(grad, y.shape)
        if self.name == "identity":
            return grad.copy()
        return grad * self._df(x, y)

    def __repr__(self):
        return f"Activation({self.name!r})"


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        x = self._enter(x)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        shape = self._cached()
        return np.asarray(grad, dtype=DTYPE).reshape(shape)


class Reshape(Layer):
    """Reshape ``[batch, n]`` to ``[batch, *shape]``."""

    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        x = self._enter(x)
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"reshape: cannot view {x.shape[1:]} as {self.shape}")
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        shape = self._cached()
        return np.asarray(grad, dtype=DTYPE).reshape(shape)


class ChannelTile(Layer):
    """Repeat input channels cyclically (axis 1) up to ``out_channels``.

    Used to give non-Fourier baselines the same input width, and therefore the
    same parameter count, as models with a Fourier precursor.
    """

    kind = "channel_tile"

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        if out_channels < in_channels:
            raise ValueError("channel_tile cannot shrink the channel count")
        self.in_channels, self.out_channels = int(in_channels), int(out_channels)
        self._index = np.arange(self.out_channels) % self.in_channels

    def forward(self, x):
        x = self._enter(x)
        if x.ndim < 2 or x.shape[1] != self.in_channels:
            raise ShapeError(f"channel_tile: expected {self.in_channels} channels on axis 1, got shape {x.shape}")
        self._cache = x.shape
        return x[:, self._index]

    def backward(self, grad):
        shape = self._cached()
        grad = np.asarray(grad, dtype=DTYPE)
        dx = np.zeros(shape)
        for start in range(0, self.out_channels, self.in_channels):
            stop = min(start + self.in_channels, self.out_channels)
            dx[:, : stop - start] += grad[:, start:stop]
        return dx


class Sequential(Layer):
    """Layers applied in order; backward runs them in reverse (chain rule)."""

    kind = "sequential"

    def __init__(self, layers=()):
        super().__init__()
        self.layers: list[Layer] = list(layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def forward(self, x):
        self._cache = True
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        self._cached()
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sequential):
                yield from layer.named_params(f"{prefix}{i}.")
            else:
                for name, arr in layer.params.items():
                    yield f"{prefix}{i}.{name}", layer, name, arr

    @property
    def params(self):
        return {key: arr for key, _, _, arr in self.named_params()}

    @params.setter
    def params(self, value):
        # the base initializer assigns an empty dict; parameters live in the children
        pass

    @property
    def frozen(self):
        return {key for key, layer, name, _ in self.named_params() if name in layer.frozen}

    @frozen.setter
    def frozen(self, value):
        pass

    @property
    def grads(self):
        out = {}
        for key, layer, name, _ in self.named_params():
            if name in layer.grads:
                out[key] = layer.grads[name]
        return out

    @grads.setter
    def grads(self, value):
        pass

    def __repr__(self):
        inner = ",\n  ".join(repr(layer) for layer in self.layers)
        return f"Sequential(\n  {inner}\n)"


def forward(layer: Layer, x) -> np.ndarray:
    return layer.forward(x)


def backward(layer: Layer, upstream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Functional form of ``layer.backward``: returns ``(input_grad, param_grads)``."""
    dx = layer.backward(upstream)
    return dx, dict(layer.grads)


# Power-of-two step: x +/- h is exact for dyadic x, so linear maps check to rounding.
FD_STEP = 2.0 ** -17


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n))) / scale


def grad_check(layer: Layer, x, seed: int = 0, h: float = FD_STEP, return_details: bool = False):
    """Compare analytic input/parameter gradients with central differences.

    The scalar probed is ``sum(r * layer(x))`` for a fixed Gaussian projection
    ``r``. The error for each tensor is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    and the largest over all tensors is returned.
    """
    x = np.array(x, dtype=DTYPE)
    rng = Rng(seed)
    y = layer.forward(x)
    r = rng.normal(y.shape)
    dx = layer.backward(r)
    analytic = {"input": dx}
    analytic.update({k: v.copy() for k, v in layer.grads.items() if k not in layer.frozen})

    def probe(fn):
        plus, minus = fn(+h), fn(-h)
        return float(np.sum(r * (plus - minus))) / (2.0 * h)

    numeric = {"input": np.zeros_like(x)}
    flat_x = x.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]

        def fx(step, i=i, orig=orig):
            flat_x[i] = orig + step
            out = layer.forward(x).copy()
            flat_x[i] = orig
            return out

        numeric["input"].reshape(-1)[i] = probe(fx)

    for name, arr in layer.trainable().items():
        if name not in analytic:
            continue
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]

            def fp(step, i=i, orig=orig, flat=flat):
                flat[i] = orig + step
                out = layer.forward(x).copy()
                flat[i] = orig
                return out

            num.reshape(-1)[i] = probe(fp)
        numeric[name] = num

    errors = {k: _rel_err(analytic[k], numeric[k]) for k in numeric}
    worst = max(errors.values())
    if return_details:
        return worst, errors
    return worst
