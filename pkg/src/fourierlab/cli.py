"""Command-line entry point: ``fourierlab <command> ...``.

Commands write plain files (CSV, JSON, checkpoint binaries) and exactly one
``manifest.json`` per output directory. Exit codes: 0 success, 1 validation
error, 2 I/O error, 3 numerical failure.

Config files are JSON with three sections::

    {
      "model":    {"kind": "ae", "latent_dim": 16, "precursor": "rft", ...},
      "fourier":  {"m": 32, "sigma": 0.15, "normalization": "none"},
      "training": {"epochs": 40, "lr": 0.001, "batch_size": 64, "seed": 0, ...},
      "data":     {"normalize": "zscore"}
    }

``model`` takes the :class:`~fourierlab.models.ModelConfig` fields other than
the ``fourier_*`` ones, which live in ``fourier`` without the prefix.
``training`` takes the :class:`~fourierlab.training.TrainConfig` fields.
``model.kind`` and ``training.epochs`` are required, and so is
``model.latent_dim`` for autoencoders. ``--set section.key=value`` overrides a
single key (the value is parsed as JSON when possible).
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime
import glob
import json
import os
import sys

import numpy as np

from . import __version__
from .anomaly_eval import AnomalyReport, choose_threshold, confusion_metrics, parse_policy, read_metric_rows
from .anomaly_eval import reconstruction_scores
from .data import (
    WINDOWS_MAGIC, FormatError, ZScore, gen_sines, gen_step, gen_synthetic_flights, load_dataset1d,
    load_windows, save_dataset1d, save_windows,
)
from .models import ConfigError, ModelConfig
from .spectral import FrequencyTracer, export_heatmap, write_trace_csv
from .training import Checkpoint, CheckpointError, NumericalError, TrainConfig, train_from_config, write_loss_csv

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3
SECTIONS = ("model", "fourier", "training", "data")
MANIFEST = "manifest.json"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: str, config: dict, inputs: dict | None = None, started=None, **extra):
    """The single manifest of ``out_dir``; everything but the timestamps is deterministic."""
    manifest = {
        "tool": "fourierlab",
        "version": __version__,
        "command": command,
        "output_dir": os.path.abspath(out_dir),
        "inputs": inputs or {},
        "config": config,
        "started": started or _now(),
        "finished": _now(),
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(directory) -> dict | None:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- config

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in SECTIONS or not name:
            raise UsageError(f"--set expects section.key=value with section in {SECTIONS}, got {item!r}")
        raw.setdefault(section, {})[name] = _parse_value(value)
    return raw


def resolve_config(raw: dict) -> tuple[ModelConfig, TrainConfig, dict]:
    """Validate the sectioned config; errors name the offending key."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(unknown[0], "unknown config section")
    model = dict(raw.get("model", {}))
    if "kind" not in model:
        raise ConfigError("kind", "required key is missing from the model section")
    if model["kind"] in ("ae", "vae") and "latent_dim" not in model:
        raise ConfigError("latent_dim", "required key is missing from the model section")
    for key, value in raw.get("fourier", {}).items():
        if key not in ("m", "sigma", "normalization"):
            raise ConfigError(f"fourier.{key}", "unknown key")
        model[f"fourier_{key}"] = value
    training = dict(raw.get("training", {}))
    if "epochs" not in training:
        raise ConfigError("epochs", "required key is missing from the training section")
    data = dict(raw.get("data", {}))
    data.setdefault("normalize", "zscore")
    if data["normalize"] not in ("zscore", "none") or set(data) != {"normalize"}:
        raise ConfigError("data.normalize", "the data section takes only normalize: zscore|none")
    return ModelConfig.from_dict(model), TrainConfig.from_dict(training), data


def resolved_snapshot(mc: ModelConfig, tc: TrainConfig, data: dict) -> dict:
    model = mc.to_dict()
    fourier = {k[len("fourier_"):]: model.pop(k) for k in list(model) if k.startswith("fourier_")}
    return {"model": model, "fourier": fourier, "training": tc.to_dict(), "data": data}


# ---------------------------------------------------------------- data

def is_windows_file(path) -> bool:
    with open(path) as fh:
        return fh.readline().startswith(WINDOWS_MAGIC)


def load_any(path):
    return load_windows(path) if is_windows_file(path) else load_dataset1d(path)


def _normalizer(directory):
    manifest = read_manifest(directory)
    if manifest and manifest.get("normalization"):
        return ZScore.from_dict(manifest["normalization"])
    return None


def _load_checkpoints(directory) -> list[Checkpoint]:
    paths = sorted(glob.glob(os.path.join(directory, "ckpt_*.bin")))
    if not paths:
        raise FileNotFoundError(f"no ckpt_*.bin files in {directory}")
    return sorted((Checkpoint.load(p) for p in paths), key=lambda c: c.epoch)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    started = _now()
    os.makedirs(args.out, exist_ok=True)
    files = {}
    if args.kind in ("step", "sines"):
        n = args.n if args.n is not None else 256
        ds = gen_step(n, seed=args.seed) if args.kind == "step" else gen_sines(n)
        path = os.path.join(args.out, f"{args.kind}.csv")
        save_dataset1d(ds, path)
        files[args.kind] = os.path.basename(path)
        params = {"kind": args.kind, "n": n, "seed": args.seed}
    else:
        ws = gen_synthetic_flights(args.n_train + args.n_nominal, args.n_anomaly, d=args.d, T=args.T,
                                   seed=args.seed)
        train_part = ws.subset(range(args.n_train))
        test_part = ws.subset(range(args.n_train, ws.n))
        save_windows(train_part, os.path.join(args.out, "train.csv"))
        save_windows(test_part, os.path.join(args.out, "test.csv"))
        files = {"train": "train.csv", "test": "test.csv"}
        params = {"kind": "flights", "seed": args.seed, "n_train": args.n_train, "n_nominal": args.n_nominal,
                  "n_anomaly": args.n_anomaly, "d": args.d, "T": args.T}
    write_manifest(args.out, "gen-data", params, started=started, files=files)
    return EXIT_OK


def _training_arrays(data, mc: ModelConfig, normalize: str):
    """Arrays for :func:`train` plus the fitted normalizer (if any)."""
    if mc.kind == "mlp":
        if hasattr(data, "samples"):
            raise UsageError("mlp models train on x,y CSV data, not windowed series")
        if mc.input_channels != 1:
            raise ConfigError("input_channels", "must be 1 for x,y CSV data")
        return (data.xs[:, None], data.ys[:, None]), None
    if not hasattr(data, "samples"):
        raise UsageError("autoencoders train on windowed series files")
    if (data.d, data.T) != (mc.input_channels, mc.time_steps):
        raise ConfigError(
            "input_channels", f"model expects [{mc.input_channels}, {mc.time_steps}] windows, data has [{data.d}, {data.T}]"
        )
    if data.labeled:
        data = data.subset(np.flatnonzero(~data.is_anomaly()))  # train on nominal samples only
    if normalize == "zscore":
        z = ZScore.fit(data.samples)
        return z.transform(data.samples), z
    return data.samples, None


def cmd_train(args) -> int:
    started = _now()
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON: {exc}") from None
    raw = apply_overrides(raw, args.set)
    mc, tc, data_cfg = resolve_config(raw)
    runs = args.runs if args.runs is not None else tc.runs
    if runs < 1:
        raise UsageError("--runs must be >= 1")
    arrays, zscore = _training_arrays(load_any(args.data), mc, data_cfg["normalize"])
    snapshot = resolved_snapshot(mc, tc, data_cfg)
    inputs = {"config": os.path.abspath(args.config), "data": os.path.abspath(args.data), "overrides": args.set or []}
    norm = zscore.to_dict() if zscore is not None else None
    os.makedirs(args.out, exist_ok=True)
    run_dirs = []
    for r in range(runs):
        run_dir = args.out if runs == 1 else os.path.join(args.out, f"run_{r:02d}")
        cfg = dataclasses.replace(tc, seed=tc.seed + r)
        res = train_from_config(mc, cfg, arrays, out_dir=run_dir, keep_checkpoints=False)
        write_loss_csv(res, os.path.join(run_dir, "loss.csv"))
        if runs > 1:
            write_manifest(run_dir, "train", snapshot, inputs, started=started, run=r, seed=cfg.seed,
                           normalization=norm)
        run_dirs.append(os.path.relpath(run_dir, args.out))
    write_manifest(args.out, "train", snapshot, inputs, started=started, runs=runs, run_dirs=run_dirs,
                   seed=tc.seed, normalization=norm)
    return EXIT_OK


def cmd_analyze_freq(args) -> int:
    started = _now()
    checkpoints = _load_checkpoints(args.checkpoints)
    data = load_any(args.data)
    if hasattr(data, "samples"):
        z = _normalizer(args.checkpoints)
        samples = z.transform(data.samples) if z is not None else data.samples
        k0 = args.k0 if args.k0 is not None else max(1, data.T // 16)
        tracer = FrequencyTracer(samples, samples, k0, data.variable_names)
    else:
        if not data.is_uniform_grid():
            raise UsageError("frequency analysis needs x values on a uniform grid (e.g. gen-data --kind sines)")
        if args.per_variable:
            raise UsageError("--per-variable needs multivariate windowed data")
        k0 = args.k0 if args.k0 is not None else 2
        tracer = FrequencyTracer(data.xs[:, None], data.ys, k0)
    for ck in checkpoints:
        tracer(ck)
    trace = tracer.trace
    os.makedirs(args.out, exist_ok=True)
    files = {"trace": "trace.csv", "heatmap": "heatmap.csv", "bins": "bins.csv"}
    write_trace_csv(trace, os.path.join(args.out, "trace.csv"))
    export_heatmap(trace, os.path.join(args.out, "heatmap.csv"))
    export_heatmap(np.asarray(trace.bins), os.path.join(args.out, "bins.csv"), epochs=trace.epochs)
    if args.per_variable:
        for name in trace.per_variable:
            fname = f"trace_{name}.csv"
            write_trace_csv(trace, os.path.join(args.out, fname), variable=name)
            files[f"trace_{name}"] = fname
    config = {"k0": k0, "per_variable": bool(args.per_variable), "checkpoints": len(checkpoints)}
    inputs = {"checkpoints": os.path.abspath(args.checkpoints), "data": os.path.abspath(args.data)}
    write_manifest(args.out, "analyze-freq", config, inputs, started=started, files=files)
    return EXIT_OK


def cmd_score(args) -> int:
    started = _now()
    name, _ = parse_policy(args.policy)
    ck = Checkpoint.load(args.checkpoint)
    model = ck.build_model()
    model.eval()
    data = load_windows(args.data)
    mc = ck.model_config
    if (data.d, data.T) != (mc.input_channels, mc.time_steps):
        raise UsageError(f"data windows [{data.d}, {data.T}] do not match the model's "
                         f"[{mc.input_channels}, {mc.time_steps}]")
    if args.metrics and not data.labeled:
        raise UsageError(f"{args.data}: labels required to compute metrics")
    z = _normalizer(os.path.dirname(os.path.abspath(args.checkpoint)))
    prep = z.transform if z is not None else (lambda s: s)
    scores = reconstruction_scores(model, prep(data.samples))
    os.makedirs(args.out, exist_ok=True)
    rows = ["index,score,label"]
    for i, s in enumerate(scores):
        rows.append(f"{i},{'%.17g' % s},{data.labels[i] if data.labeled else ''}")
    with open(os.path.join(args.out, "scores.csv"), "w", newline="") as fh:
        fh.write("\n".join(rows) + "\n")
    files = {"scores": "scores.csv"}
    extra = {}
    if args.metrics:
        if name == "quantile":
            if args.train_data is None:
                raise UsageError("the quantile policy needs --train-data (nominal training windows)")
            train = load_windows(args.train_data)
            if train.labeled:
                train = train.subset(np.flatnonzero(~train.is_anomaly()))
            threshold = choose_threshold(reconstruction_scores(model, prep(train.samples)), args.policy)
        else:
            threshold = choose_threshold(scores, args.policy, labels=data.labels)
        metrics = confusion_metrics(scores, data.labels, threshold)
        report = AnomalyReport(policy=args.policy)
        report.add(args.run, args.model_name, metrics, threshold)
        report.to_csv(os.path.join(args.out, "metrics.csv"))
        files["metrics"] = "metrics.csv"
        extra = {"threshold": threshold, "precision_defined": metrics.precision_defined,
                 "recall_defined": metrics.recall_defined}
    config = {"policy": args.policy, "metrics": bool(args.metrics), "run": args.run, "model": args.model_name}
    inputs = {"checkpoint": os.path.abspath(args.checkpoint), "data": os.path.abspath(args.data),
              "train_data": os.path.abspath(args.train_data) if args.train_data else None}
    write_manifest(args.out, "score", config, inputs, started=started, files=files, **extra)
    return EXIT_OK


def cmd_report(args) -> int:
    started = _now()
    paths = sorted(glob.glob(os.path.join(args.runs_dir, "**", "metrics.csv"), recursive=True))
    out = args.out if args.out is not None else os.path.join(args.runs_dir, "report")
    paths = [p for p in paths if os.path.dirname(os.path.abspath(p)) != os.path.abspath(out)]
    if not paths:
        raise FileNotFoundError(f"no metrics.csv files under {args.runs_dir}")
    report = AnomalyReport(policy="")
    policies = set()
    for p in paths:
        manifest = read_manifest(os.path.dirname(p))
        if manifest is not None:
            policies.add(manifest.get("config", {}).get("policy", ""))
        for row in read_metric_rows(p):
            report.rows.append(row)
    report.policy = ",".join(sorted(x for x in policies if x)) or "unrecorded"
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "runs.csv"))
    means = report.means()
    lines = ["model,runs,precision,recall,f1"]
    for model_name, m in means.items():
        lines.append(f"{model_name},{m['runs']},{'%.17g' % m['precision']},{'%.17g' % m['recall']},{'%.17g' % m['f1']}")
    with open(os.path.join(out, "report.csv"), "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    summary = report.summary()
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    sys.stdout.write(summary)
    inputs = {"metrics": [os.path.relpath(p, args.runs_dir) for p in paths]}
    write_manifest(out, "report", {"runs_dir": os.path.abspath(args.runs_dir)}, inputs, started=started,
                   files={"runs": "runs.csv", "report": "report.csv", "summary": "summary.txt"})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fourierlab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"fourierlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a dataset")
    g.add_argument("--kind", required=True, choices=["step", "sines", "flights"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=None, help="grid/sample size for step and sines (default 256)")
    g.add_argument("--n-train", type=int, default=800, help="flights: nominal training windows")
    g.add_argument("--n-nominal", type=int, default=100, help="flights: nominal test windows")
    g.add_argument("--n-anomaly", type=int, default=100, help="flights: anomalous test windows")
    g.add_argument("--d", type=int, default=10, help="flights: channels")
    g.add_argument("--T", type=int, default=160, help="flights: window length")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--runs", type=int, default=None)
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze-freq", help="low/high band errors across checkpoints")
    a.add_argument("--checkpoints", required=True, help="directory holding ckpt_*.bin")
    a.add_argument("--data", required=True)
    a.add_argument("--k0", type=int, default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--per-variable", action="store_true")
    a.set_defaults(func=cmd_analyze_freq)

    s = sub.add_parser("score", help="reconstruction-error scores and optional metrics")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--policy", default="quantile", help="quantile[:q] or best_f1")
    s.add_argument("--out", required=True)
    s.add_argument("--metrics", action="store_true")
    s.add_argument("--train-data", default=None, help="nominal windows for the quantile policy")
    s.add_argument("--run", type=int, default=0)
    s.add_argument("--model-name", default="model")
    s.set_defaults(func=cmd_score)

    r = sub.add_parser("report", help="mean precision/recall/F1 over scored runs")
    r.add_argument("--runs-dir", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"fourierlab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"fourierlab {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, CheckpointError, UsageError, ValueError) as exc:
        print(f"fourierlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"fourierlab {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
