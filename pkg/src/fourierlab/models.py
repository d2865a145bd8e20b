"""Autoencoder, variational autoencoder and the benchmark regression MLP.

All three are assembled from :mod:`fourierlab.nn_core` layers and may be
preceded by a Fourier feature layer (``precursor="rft"`` for a frozen random
frequency matrix, ``"tft"`` for a trainable one).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .fourier_features import FourierFeatures, init_fourier
from .nn_core import (
    DTYPE, Activation, ChannelTile, Conv1d, ConvTranspose1d, Dense, Flatten, Reshape,
    Sequential, ShapeError, check_finite, conv_output_length,
)
from .rng import Rng

KINDS = ("ae", "vae", "mlp")
PRECURSORS = ("none", "rft", "tft")


class ConfigError(ValueError):
    """Invalid or incomplete model/training configuration; ``key`` names the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def default_encoder() -> list[dict]:
    return [
        {"type": "conv", "channels": 32, "kernel": 5, "stride": 2},
        {"type": "conv", "channels": 64, "kernel": 5, "stride": 2},
    ]


@dataclass
class ModelConfig:
    kind: str = "ae"
    precursor: str = "none"
    input_channels: int = 10
    time_steps: int = 160
    fourier_m: int = 32
    fourier_sigma: float = 1.0
    fourier_normalization: str = "none"
    duplicate_input: bool = False
    encoder: list = field(default_factory=default_encoder)
    latent_dim: int = 16
    activation: str = "relu"
    hidden: list = field(default_factory=lambda: [256, 256])
    output_dim: int = 1
    beta_kl: float = 1.0
    kl_warmup: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if self.precursor not in PRECURSORS:
            raise ConfigError("precursor", f"must be one of {PRECURSORS}, got {self.precursor!r}")
        for key in ("input_channels", "time_steps", "fourier_m", "latent_dim", "output_dim"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(key, "must be >= 1")
        if not self.fourier_sigma > 0:
            raise ConfigError("fourier_sigma", "must be positive")
        if self.beta_kl < 0:
            raise ConfigError("beta_kl", "must be nonnegative")
        if not 0 <= self.kl_warmup <= 1:
            raise ConfigError("kl_warmup", "must lie in [0, 1]")
        for i, spec in enumerate(self.encoder):
            if spec.get("type") not in ("conv", "dense"):
                raise ConfigError(f"encoder[{i}].type", "must be 'conv' or 'dense'")

    @property
    def uses_fourier(self) -> bool:
        return self.precursor != "none"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, required=()) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in required:
            if key not in data:
                raise ConfigError(key, "required key is missing")
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown model key")
        return cls(**data)


@dataclass
class LatentSample:
    mu: np.ndarray
    log_var: np.ndarray
    eps: np.ndarray
    z: np.ndarray


@dataclass
class LossValue:
    total: float
    recon: float
    kl: float

    def __iter__(self):
        return iter((self.total, self.recon, self.kl))


def kl_divergence(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=DTYPE)
    log_var = np.asarray(log_var, dtype=DTYPE)
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu shape {mu.shape} != log_var shape {log_var.shape}")
    return 0.5 * np.sum(mu * mu + np.exp(log_var) - 1.0 - log_var, axis=-1)


def kl_grad(mu, log_var):
    """Gradients of :func:`kl_divergence` w.r.t. ``mu`` and ``log_var``."""
    return np.asarray(mu, dtype=DTYPE), 0.5 * (np.exp(log_var) - 1.0)


def mse(x, x_hat) -> float:
    return float(np.mean((np.asarray(x_hat) - np.asarray(x)) ** 2))


def _make_precursor(cfg: ModelConfig, rng: Rng):
    if cfg.uses_fourier:
        layer = init_fourier(cfg.input_channels, cfg.fourier_m, cfg.fourier_sigma,
                             trainable=cfg.precursor == "tft", seed=rng,
                             normalization=cfg.fourier_normalization)
        return [layer], 2 * cfg.fourier_m
    if cfg.duplicate_input and 2 * cfg.fourier_m > cfg.input_channels:
        return [ChannelTile(cfg.input_channels, 2 * cfg.fourier_m)], 2 * cfg.fourier_m
    return [], cfg.input_channels


class Model:
    """Shared parameter bookkeeping; subclasses define ``components``."""

    config: ModelConfig
    components: dict[str, Sequential]

    def __init__(self):
        self.training = True

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def named_params(self):
        """Yield ``(key, layer, name, array)`` for every parameter in a fixed order."""
        for prefix, seq in self.components.items():
            yield from seq.named_params(prefix + ".")

    def trainable_params(self):
        for key, layer, name, arr in self.named_params():
            if name not in layer.frozen:
                yield key, layer, name, arr

    def state_dict(self) -> dict[str, np.ndarray]:
        return {key: arr.copy() for key, _, _, arr in self.named_params()}

    def load_state_dict(self, state: dict) -> None:
        for key, _, _, arr in self.named_params():
            if key not in state:
                raise KeyError(f"missing parameter {key}")
            value = np.asarray(state[key], dtype=DTYPE)
            if value.shape != arr.shape:
                raise ShapeError(f"parameter {key}: shape {value.shape} != {arr.shape}")
            arr[...] = value

    def param_vector(self) -> np.ndarray:
        return np.concatenate([arr.reshape(-1) for _, _, _, arr in self.named_params()])

    def load_param_vector(self, flat) -> None:
        flat = np.asarray(flat, dtype=DTYPE)
        total = sum(arr.size for _, _, _, arr in self.named_params())
        if flat.size != total:
            raise ShapeError(f"parameter blob has {flat.size} values, model needs {total}")
        offset = 0
        for _, _, _, arr in self.named_params():
            arr[...] = flat[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def num_params(self, trainable_only=False) -> int:
        it = self.trainable_params() if trainable_only else self.named_params()
        return sum(arr.size for *_, arr in it)

    def layer_sequence(self):
        """``(name, layer)`` pairs in forward order, for diagnostics."""
        for prefix, seq in self.components.items():
            for i, layer in enumerate(seq.layers):
                yield f"{prefix}.{i}:{layer.kind}", layer


class Autoencoder(Model):
    """Convolutional (or dense) autoencoder; ``kind="vae"`` adds a Gaussian latent.

    The encoder head of a VAE emits ``2 * latent_dim`` values, read as the mean
    and the log-variance of ``q(z|x)``. A plain autoencoder's head emits the
    latent code directly and is trained on reconstruction error alone.
    """

    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        if config.kind not in ("ae", "vae"):
            raise ConfigError("kind", "Autoencoder needs kind 'ae' or 'vae'")
        self.config = config
        cfg = config
        act = cfg.activation
        enc, channels = _make_precursor(cfg, rng)
        length = cfg.time_steps
        flat_dim = None
        mirror = []  # (kind, args) recorded to build the decoder
        for i, spec in enumerate(cfg.encoder):
            if spec["type"] == "conv":
                if flat_dim is not None:
                    raise ConfigError(f"encoder[{i}]", "conv layers must precede dense layers")
                k = int(spec.get("kernel", 5))
                s = int(spec.get("stride", 1))
                p = int(spec.get("padding", k // 2))
                out_len = conv_output_length(length, k, s, p)
                if out_len < 1:
                    raise ConfigError(f"encoder[{i}]", f"sequence length {length} too short")
                enc += [Conv1d(channels, int(spec["channels"]), k, s, p, rng), Activation(act)]
                mirror.append(("conv", channels, int(spec["channels"]), k, s, p, length, out_len))
                channels, length = int(spec["channels"]), out_len
            else:
                if flat_dim is None:
                    enc.append(Flatten())
                    flat_dim = channels * length
                    mirror.append(("flatten", channels, length))
                units = int(spec["units"])
                enc += [Dense(flat_dim, units, rng), Activation(act)]
                mirror.append(("dense", flat_dim, units))
                flat_dim = units
        if flat_dim is None:
            enc.append(Flatten())
            flat_dim = channels * length
            mirror.append(("flatten", channels, length))
        head = 2 * cfg.latent_dim if cfg.kind == "vae" else cfg.latent_dim
        enc.append(Dense(flat_dim, head, rng))

        dec = [Dense(cfg.latent_dim, flat_dim, rng)]
        # walk the encoder backwards; the last decoder layer lands on the raw input channels
        for j, item in enumerate(reversed(mirror)):
            last = j == len(mirror) - 1
            if item[0] == "dense":
                _, n_in, n_out = item
                dec += [Activation(act), Dense(n_out, n_in, rng)]
            elif item[0] == "flatten":
                _, ch, ln = item
                dec.append(Reshape((ch, ln)))
            else:
                _, c_in, c_out, k, s, p, l_in, l_out = item
                op = l_in - ((l_out - 1) * s - 2 * p + k)
                target = cfg.input_channels if last else c_in
                dec += [Activation(act), ConvTranspose1d(c_out, target, k, s, p, op, rng)]
        if mirror[0][0] != "conv" and channels != cfg.input_channels:
            # no transposed convolution restores the raw channel count
            dec.append(Conv1d(channels, cfg.input_channels, 1, 1, 0, rng))
        self.encoder = Sequential(enc)
        self.decoder = Sequential(dec)
        self.components = {"encoder": self.encoder, "decoder": self.decoder}

    @property
    def is_vae(self) -> bool:
        return self.config.kind == "vae"

    def _batch(self, x):
        x = np.asarray(x, dtype=DTYPE)
        d, T = self.config.input_channels, self.config.time_steps
        if x.shape == (d, T):
            return x[None], True
        if x.ndim != 3 or x.shape[1:] != (d, T):
            raise ShapeError(f"expected input [batch, {d}, {T}] or [{d}, {T}], got {x.shape}")
        return x, False

    def encode(self, x, rng: Rng | None = None, eps=None):
        """Deterministic code for an AE; a :class:`LatentSample` for a VAE.

        VAE noise comes from ``eps`` if given, else from ``rng`` in training mode;
        in eval mode (or without a generator) it is zero, so ``z == mu``.
        """
        xb, squeeze = self._batch(x)
        h = self.encoder.forward(xb)
        if not self.is_vae:
            return h[0] if squeeze else h
        L = self.config.latent_dim
        mu, log_var = h[:, :L], h[:, L:]
        if eps is None:
            if self.training and rng is not None:
                eps = rng.normal(mu.shape)
            else:
                eps = np.zeros_like(mu)
        eps = np.asarray(eps, dtype=DTYPE).reshape(mu.shape)
        z = mu + np.exp(0.5 * log_var) * eps
        sample = LatentSample(mu, log_var, eps, z)
        if squeeze:
            return LatentSample(mu[0], log_var[0], eps[0], z[0])
        return sample

    def decode(self, z):
        z = np.asarray(z, dtype=DTYPE)
        squeeze = z.ndim == 1
        zb = z[None] if squeeze else z
        if zb.ndim != 2 or zb.shape[1] != self.config.latent_dim:
            raise ShapeError(f"expected latent of size {self.config.latent_dim}, got shape {z.shape}")
        out = self.decoder.forward(zb)
        return out[0] if squeeze else out

    def reconstruct(self, x):
        """Reconstruction with the noise switched off (a VAE decodes its posterior mean)."""
        code = self.encode(x, rng=None)
        return self.decode(code.z if self.is_vae else code)

    def loss(self, x, rng: Rng | None = None, eps=None, beta: float | None = None) -> LossValue:
        return self._loss(x, rng, eps, beta, with_grad=False)

    def loss_and_grad(self, x, y=None, rng: Rng | None = None, eps=None, beta: float | None = None) -> LossValue:
        """Loss on a batch; parameter gradients are left in each layer's ``grads``."""
        return self._loss(x, rng, eps, beta, with_grad=True)

    def _loss(self, x, rng, eps, beta, with_grad):
        xb, _ = self._batch(x)
        beta = self.config.beta_kl if beta is None else float(beta)
        n = xb.shape[0]
        code = self.encode(xb, rng=rng, eps=eps)
        z = code.z if self.is_vae else code
        x_hat = self.decoder.forward(z)
        diff = x_hat - xb
        recon = float(np.mean(diff * diff))
        kl = 0.0
        if self.is_vae:
            kl = float(np.mean(kl_divergence(code.mu, code.log_var)))
        total = recon + beta * kl
        if with_grad:
            dz = self.decoder.backward(2.0 * diff / diff.size)
            if self.is_vae:
                sigma = np.exp(0.5 * code.log_var)
                dmu_kl, dlv_kl = kl_grad(code.mu, code.log_var)
                dmu = dz + beta * dmu_kl / n
                dlv = dz * code.eps * 0.5 * sigma + beta * dlv_kl / n
                self.encoder.backward(np.concatenate([dmu, dlv], axis=1))
            else:
                self.encoder.backward(dz)
        return LossValue(total, recon, kl)

    def predict(self, x):
        return self.reconstruct(x)


class Regressor(Model):
    """``d -> hidden... -> output_dim`` MLP (tanh), optionally behind a Fourier layer."""

    def __init__(self, config: ModelConfig, rng: Rng):
        super().__init__()
        if config.kind != "mlp":
            raise ConfigError("kind", "Regressor needs kind 'mlp'")
        self.config = config
        layers, width = _make_precursor(config, rng)
        for units in config.hidden:
            layers += [Dense(width, int(units), rng), Activation("tanh")]
            width = int(units)
        layers.append(Dense(width, config.output_dim, rng))
        self.net = Sequential(layers)
        self.components = {"net": self.net}

    def _batch(self, x):
        x = np.asarray(x, dtype=DTYPE)
        d = self.config.input_channels
        if x.ndim == 1 and d == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != d:
            raise ShapeError(f"expected input [batch, {d}], got {x.shape}")
        return x

    def predict(self, x):
        return self.net.forward(self._batch(x))

    def loss(self, x, y, rng=None, eps=None, beta=None) -> LossValue:
        return self._loss(x, y, with_grad=False)

    def loss_and_grad(self, x, y=None, rng=None, eps=None, beta=None) -> LossValue:
        return self._loss(x, y, with_grad=True)

    def _loss(self, x, y, with_grad):
        out = self.net.forward(self._batch(x))
        y = np.asarray(y, dtype=DTYPE).reshape(out.shape)
        diff = out - y
        recon = float(np.mean(diff * diff))
        if with_grad:
            self.net.backward(2.0 * diff / diff.size)
        return LossValue(recon, recon, 0.0)


def build_model(config: ModelConfig, seed=0) -> Model:
    """Instantiate the model a config describes; ``seed`` may be an int or an :class:`Rng`."""
    rng = seed if isinstance(seed, Rng) else Rng(seed)
    if config.kind == "mlp":
        return Regressor(config, rng)
    return Autoencoder(config, rng)


def encode(model: Autoencoder, x, rng=None, eps=None):
    return model.encode(x, rng=rng, eps=eps)


def decode(model: Autoencoder, z):
    return model.decode(z)


def loss(model: Model, x, y=None, rng=None, eps=None):
    if isinstance(model, Regressor):
        return model.loss(x, y)
    return model.loss(x, rng=rng, eps=eps)


def locate_nonfinite(model: Model, x) -> str | None:
    """Name of the first layer whose output is non-finite on ``x`` (``None`` if all finite)."""
    h = np.asarray(x, dtype=DTYPE)
    try:
        check_finite(h)
    except ValueError:
        return "input"
    if isinstance(model, Autoencoder):
        h, _ = model._batch(h)
        for name, layer in model.layer_sequence():
            if name.startswith("decoder.0") and model.is_vae:
                h = h[:, : model.config.latent_dim]
            h = layer.forward(h)
            if not np.all(np.isfinite(h)):
                return name
        return None
    h = model._batch(h)
    for name, layer in model.layer_sequence():
        h = layer.forward(h)
        if not np.all(np.isfinite(h)):
            return name
    return None


def model_grad_check(model: Model, x, y=None, eps=None, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients of the total loss.

    For a VAE the reparameterization noise ``eps`` is held fixed (zeros if omitted).
    """
    x = np.asarray(x, dtype=DTYPE)
    if isinstance(model, Autoencoder) and model.is_vae and eps is None:
        xb, _ = model._batch(x)
        eps = np.zeros((xb.shape[0], model.config.latent_dim))

    def total():
        if isinstance(model, Regressor):
            return model.loss(x, y).total
        return model.loss(x, eps=eps).total

    model.loss_and_grad(x, y, eps=eps)
    worst = 0.0
    for key, layer, name, arr in list(model.trainable_params()):
        analytic = layer.grads[name].copy()
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = total()
            flat[i] = orig - h
            lm = total()
            flat[i] = orig
            numeric.reshape(-1)[i] = (lp - lm) / (2 * h)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
    return worst
