"""Optimizers, the training loop, checkpoint files and the multi-run harness.

Checkpoint byte layout (all integers little-endian)::

    7 bytes   b"SPECLAB"
    u32       format version (currently 1)
    u32       header length H in bytes
    H bytes   UTF-8 JSON header, keys sorted: model config, epoch, seed,
              loss history, generator state, parameter layout, optimizer
              metadata
    8*P bytes float64 parameters, in the model's fixed parameter order
    8*S bytes float64 optimizer state (Adam: first moments then second
              moments, trainable parameters only; empty for SGD)
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .models import ConfigError, Model, ModelConfig, build_model, locate_nonfinite
from .rng import Rng

log = logging.getLogger(__name__)

MAGIC = b"SPECLAB"
FORMAT_VERSION = 1


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    checkpoint_every: int | None = None  # None: log-spaced snapshots
    n_checkpoints: int = 20
    runs: int = 1

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer", f"must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError("lr", "must be positive")
        for key in ("beta1", "beta2"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(key, "must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.runs < 1:
            raise ConfigError("runs", "must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every", "must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown training key")
        return cls(**data)


def sgd_step(w, g, lr):
    return w - lr * g


def adam_step(w, g, state: dict, t: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``state`` holds ``m`` and ``v`` and is updated in place."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    m = state.get("m", np.zeros_like(g))
    v = state.get("v", np.zeros_like(g))
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    state["m"], state["v"] = m, v
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return w - lr * m_hat / (np.sqrt(v_hat) + eps)


class SGD:
    kind = "sgd"

    def __init__(self, lr):
        self.lr = lr
        self.t = 0

    def step(self, model: Model):
        self.t += 1
        for _, layer, name, arr in model.trainable_params():
            arr[...] = sgd_step(arr, layer.grads[name], self.lr)

    def state_vector(self) -> np.ndarray:
        return np.zeros(0)

    def load_state_vector(self, model, flat, t):
        self.t = t


class Adam:
    kind = "adam"

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.state: dict[str, dict] = {}

    def step(self, model: Model):
        self.t += 1
        for key, layer, name, arr in model.trainable_params():
            st = self.state.setdefault(key, {})
            arr[...] = adam_step(arr, layer.grads[name], st, self.t, self.lr, self.beta1, self.beta2, self.eps)

    def state_vector(self) -> np.ndarray:
        if not self.state:
            return np.zeros(0)
        ms = [st["m"].reshape(-1) for st in self.state.values()]
        vs = [st["v"].reshape(-1) for st in self.state.values()]
        return np.concatenate(ms + vs)

    def load_state_vector(self, model: Model, flat, t):
        self.t = t
        self.state = {}
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size == 0:
            return
        params = [(key, arr) for key, _, _, arr in model.trainable_params()]
        total = sum(a.size for _, a in params)
        if flat.size != 2 * total:
            raise CheckpointError(f"optimizer state has {flat.size} values, expected {2 * total}")
        off = 0
        for key, arr in params:
            self.state[key] = {"m": flat[off:off + arr.size].reshape(arr.shape).copy()}
            off += arr.size
        for key, arr in params:
            self.state[key]["v"] = flat[off:off + arr.size].reshape(arr.shape).copy()
            off += arr.size


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr)
    return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: np.ndarray
    epoch: int
    seed: int
    loss_history: list = field(default_factory=list)
    rng_state: dict | None = None
    optimizer: dict | None = None  # {"kind", "t"}
    optimizer_state: np.ndarray = field(default_factory=lambda: np.zeros(0))
    param_layout: list = field(default_factory=list)  # [[key, shape], ...]

    def build_model(self) -> Model:
        model = build_model(self.model_config, seed=0)
        model.load_param_vector(self.params)
        return model

    def header(self) -> dict:
        return {
            "model_config": self.model_config.to_dict(),
            "epoch": int(self.epoch),
            "seed": int(self.seed),
            "loss_history": [float(v) for v in self.loss_history],
            "rng_state": self.rng_state,
            "optimizer": self.optimizer,
            "param_count": int(self.params.size),
            "optimizer_state_count": int(self.optimizer_state.size),
            "param_layout": self.param_layout,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return b"".join([
            MAGIC,
            struct.pack("<II", FORMAT_VERSION, len(head)),
            head,
            np.asarray(self.params, dtype="<f8").tobytes(),
            np.asarray(self.optimizer_state, dtype="<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        off = len(MAGIC)
        version, hlen = struct.unpack_from("<II", blob, off)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        off += 8
        head = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        n_p, n_s = head["param_count"], head["optimizer_state_count"]
        if len(blob) != off + 8 * (n_p + n_s):
            raise CheckpointError("checkpoint payload size does not match its header")
        params = np.frombuffer(blob, dtype="<f8", count=n_p, offset=off).astype(np.float64)
        opt = np.frombuffer(blob, dtype="<f8", count=n_s, offset=off + 8 * n_p).astype(np.float64)
        return cls(
            model_config=ModelConfig.from_dict(head["model_config"]),
            params=params,
            epoch=head["epoch"],
            seed=head["seed"],
            loss_history=head["loss_history"],
            rng_state=head["rng_state"],
            optimizer=head["optimizer"],
            optimizer_state=opt,
            param_layout=head["param_layout"],
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def snapshot(model: Model, epoch: int, seed: int, losses, rng: Rng, opt) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        params=model.param_vector(),
        epoch=epoch,
        seed=seed,
        loss_history=list(losses),
        rng_state=rng.get_state(),
        optimizer={"kind": opt.kind, "t": opt.t},
        optimizer_state=opt.state_vector(),
        param_layout=[[key, list(arr.shape)] for key, _, _, arr in model.named_params()],
    )


def checkpoint_epochs(epochs: int, every: int | None = None, count: int = 20) -> list[int]:
    """Epochs at which to snapshot: 0, the final epoch, and either every ``every``
    epochs or ``count`` log-spaced epochs in between."""
    if epochs <= 0:
        return [0]
    if every is not None:
        marks = set(range(0, epochs + 1, every))
    else:
        marks = {int(round(v)) for v in np.geomspace(1, epochs, num=max(count - 1, 1))}
    marks |= {0, epochs}
    return sorted(m for m in marks if 0 <= m <= epochs)


@dataclass
class TrainResult:
    model: Model
    checkpoints: list
    losses: list  # mean total loss per epoch
    components: list  # (total, recon, kl) per epoch


def _split_data(data):
    if isinstance(data, tuple):
        x, y = data
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        if len(x) != len(y):
            raise ValueError("inputs and targets differ in length")
        return x, y
    return np.asarray(data, dtype=np.float64), None


def train(model: Model, data, cfg: TrainConfig, rng: Rng | None = None, out_dir=None,
          resume_from: Checkpoint | None = None, keep_checkpoints: bool = True,
          on_checkpoint=None) -> TrainResult:
    """Minibatch training with seeded shuffling and checkpoint snapshots.

    ``data`` is a sample tensor (autoencoders reconstruct their input) or an
    ``(inputs, targets)`` pair (regression). Labels never enter this function.
    Snapshots are kept in memory (unless ``keep_checkpoints`` is false), passed
    to ``on_checkpoint`` if given, and written as ``ckpt_<epoch>.bin`` files
    when ``out_dir`` is set. Training ends early after a snapshot for which
    ``on_checkpoint`` returns a true value.
    """
    x, y = _split_data(data)
    if len(x) == 0:
        raise ValueError("dataset is empty")
    rng = rng if rng is not None else Rng(cfg.seed)
    opt = make_optimizer(cfg)
    losses, comps = [], []
    start = 0
    if resume_from is not None:
        model.load_param_vector(resume_from.params)
        rng.set_state(resume_from.rng_state)
        opt.load_state_vector(model, resume_from.optimizer_state, resume_from.optimizer["t"])
        losses = list(resume_from.loss_history)
        start = resume_from.epoch
    marks = set(checkpoint_epochs(cfg.epochs, cfg.checkpoint_every, cfg.n_checkpoints))
    checkpoints = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def record(epoch):
        ck = snapshot(model, epoch, cfg.seed, losses, rng, opt)
        if keep_checkpoints:
            checkpoints.append(ck)
        if out_dir is not None:
            ck.save(os.path.join(out_dir, f"ckpt_{epoch:06d}.bin"))
        return bool(on_checkpoint(ck)) if on_checkpoint is not None else False

    stop = start == 0 and 0 in marks and record(0)
    model.train()
    n = len(x)
    warm = getattr(model.config, "kl_warmup", 0.0)
    beta_full = getattr(model.config, "beta_kl", 0.0)
    for epoch in range(start + 1, cfg.epochs + 1):
        if stop:
            break
        beta = beta_full
        if warm > 0:
            beta = beta_full * min(1.0, (epoch - 1) / (warm * cfg.epochs))
        order = rng.permutation(n)
        sums = np.zeros(3)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = x[idx]
            yb = None if y is None else y[idx]
            val = model.loss_and_grad(xb, yb, rng=rng, beta=beta)
            if not np.isfinite(val.total):
                where = locate_nonfinite(model, xb)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}; first non-finite output: {where or 'loss only'}"
                )
            opt.step(model)
            sums += len(idx) * np.array([val.total, val.recon, val.kl])
        sums /= n
        losses.append(float(sums[0]))
        comps.append(tuple(float(v) for v in sums))
        if epoch in marks:
            stop = record(epoch)
    model.eval()
    return TrainResult(model, checkpoints, losses, comps)


def train_from_config(model_cfg: ModelConfig, train_cfg: TrainConfig, data, out_dir=None,
                      keep_checkpoints: bool = True, on_checkpoint=None) -> TrainResult:
    """Build the model from the run's generator, then train with the same generator."""
    rng = Rng(train_cfg.seed)
    model = build_model(model_cfg, rng)
    return train(model, data, train_cfg, rng=rng, out_dir=out_dir, keep_checkpoints=keep_checkpoints,
                 on_checkpoint=on_checkpoint)


def write_loss_csv(result: TrainResult, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "total", "recon", "kl"])
    for i, (tot, rec, kl) in enumerate(result.components, start=1):
        w.writerow([i, "%.17g" % tot, "%.17g" % rec, "%.17g" % kl])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def aggregate_metrics(per_run: list[dict]) -> dict:
    """Mean of every numeric metric across runs (run order does not matter)."""
    if not per_run:
        raise ValueError("no runs to aggregate")
    keys = [k for k, v in per_run[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    return {k: float(np.mean(sorted(float(r[k]) for r in per_run))) for k in keys}


class RunError(RuntimeError):
    def __init__(self, run: int, cause: Exception):
        super().__init__(f"run {run} failed: {cause}")
        self.run = run
        self.cause = cause


@dataclass
class ExperimentResult:
    runs: list  # per-run metric dicts (with "run" and "seed")
    aggregate: dict
    results: list = field(default_factory=list)  # TrainResult per run when kept


def _one_run(args):
    r, model_cfg, train_cfg, data, evaluate, out_dir, keep = args
    cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + r)
    run_dir = None if out_dir is None else os.path.join(out_dir, f"run_{r:02d}")
    try:
        res = train_from_config(model_cfg, cfg, data, out_dir=run_dir, keep_checkpoints=keep)
        metrics = evaluate(res) if evaluate is not None else {"final_loss": res.losses[-1] if res.losses else float("nan")}
    except Exception as exc:  # noqa: BLE001 - re-raised with the run index
        raise RunError(r, exc) from exc
    metrics = dict(metrics)
    metrics.update(run=r, seed=cfg.seed)
    return metrics, (res if keep else None)


def run_experiment(model_cfg: ModelConfig, train_cfg: TrainConfig, data, runs: int | None = None,
                   evaluate=None, out_dir=None, workers: int = 1, keep_results: bool = False) -> ExperimentResult:
    """Repeat training ``runs`` times; run ``r`` uses seed ``train_cfg.seed + r``.

    ``evaluate(result) -> dict`` turns each run into metrics; the aggregate is
    the per-metric mean. With ``workers > 1`` runs execute in separate processes
    (``evaluate`` must then be picklable).
    """
    runs = train_cfg.runs if runs is None else runs
    if runs < 1:
        raise ValueError("runs must be >= 1")
    jobs = [(r, model_cfg, train_cfg, data, evaluate, out_dir, keep_results) for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_one_run, jobs))
    else:
        outs = [_one_run(job) for job in jobs]
    per_run = [m for m, _ in outs]
    agg = aggregate_metrics([{k: v for k, v in m.items() if k not in ("run", "seed")} for m in per_run])
    return ExperimentResult(per_run, agg, [r for _, r in outs if r is not None])
