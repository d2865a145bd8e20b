"""Reconstruction-error anomaly scoring and precision/recall/F1 reporting.

The positive class is "anomaly"; a sample is flagged when its score is
strictly greater than the threshold. Metrics are reported in percent.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ANOMALY, WindowedSeriesSet


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: list | None = None
    threshold: float | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels is not None and len(self.labels) != len(self.scores):
            raise ValueError(f"{len(self.labels)} labels for {len(self.scores)} scores")


def reconstruction_scores(model, samples, batch_size: int = 256) -> np.ndarray:
    """Per-sample mean squared reconstruction error; VAEs decode the posterior mean."""
    x = np.asarray(samples, dtype=np.float64)
    out = np.empty(len(x))
    for lo in range(0, len(x), batch_size):
        xb = x[lo:lo + batch_size]
        x_hat = model.reconstruct(xb)
        out[lo:lo + len(xb)] = np.mean((x_hat - xb) ** 2, axis=tuple(range(1, xb.ndim)))
    return out


def score(model, ws: WindowedSeriesSet) -> ScoreSet:
    if hasattr(model, "config") and (ws.d, ws.T) != (model.config.input_channels, model.config.time_steps):
        raise ValueError(
            f"data shape [{ws.d}, {ws.T}] does not match model input "
            f"[{model.config.input_channels}, {model.config.time_steps}]"
        )
    model.eval()
    return ScoreSet(reconstruction_scores(model, ws.samples), ws.labels)


def _as_bool_labels(labels) -> np.ndarray:
    labels = list(labels)
    if labels and isinstance(labels[0], str):
        return np.array([lab == ANOMALY for lab in labels])
    return np.asarray(labels, dtype=bool)


def quantile_threshold(scores, q: float = 0.95) -> float:
    """Nearest-rank empirical quantile: the ``ceil(q * n)``-th smallest score."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    if s.size == 0:
        raise ValueError("cannot choose a threshold from an empty score set")
    if not 0 < q <= 1:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    rank = max(1, math.ceil(q * s.size - 1e-12))
    return float(s[rank - 1])


def best_f1_threshold(scores, labels) -> float:
    """Threshold maximizing F1 over all observed scores (ties go to the lowest threshold)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot choose a threshold from an empty score set")
    y = _as_bool_labels(labels)
    best_t, best_f = None, -1.0
    for t in np.unique(s):
        f = confusion_metrics(s, y, t).f1
        if f > best_f:
            best_t, best_f = float(t), f
    return best_t


def parse_policy(policy: str) -> tuple[str, float | None]:
    """``"quantile"``, ``"quantile:0.9"`` or ``"best_f1"``."""
    name, _, arg = policy.partition(":")
    if name == "quantile":
        return name, float(arg) if arg else 0.95
    if name == "best_f1" and not arg:
        return name, None
    raise ValueError(f"unknown threshold policy {policy!r}")


def choose_threshold(scores, policy: str = "quantile", q: float | None = None, labels=None) -> float:
    """``quantile`` uses nominal training scores only; ``best_f1`` needs a labeled validation split."""
    name, arg = parse_policy(policy)
    if name == "quantile":
        return quantile_threshold(scores, q if q is not None else arg)
    if labels is None:
        raise ValueError("labels required for the best_f1 policy")
    return best_f1_threshold(scores, labels)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_defined: bool = True
    recall_defined: bool = True

    @property
    def f1_defined(self) -> bool:
        return self.precision_defined and self.recall_defined and (self.precision + self.recall) > 0


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of two percentages (0 when both are 0)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def confusion_metrics(scores, labels, threshold: float) -> Metrics:
    s = np.asarray(scores, dtype=np.float64)
    y = _as_bool_labels(labels)
    if s.shape != y.shape:
        raise ValueError(f"{y.size} labels for {s.size} scores")
    pred = s > threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    p_def, r_def = tp + fp > 0, tp + fn > 0
    p = 100.0 * tp / (tp + fp) if p_def else 0.0
    r = 100.0 * tp / (tp + fn) if r_def else 0.0
    return Metrics(p, r, f1_score(p, r), tp, fp, fn, tn, p_def, r_def)


@dataclass
class AnomalyReport:
    """Per-run metric rows and their per-model means."""

    rows: list = field(default_factory=list)  # dicts: run, model, precision, recall, f1, threshold
    policy: str = "quantile:0.95"

    def add(self, run: int, model: str, metrics: Metrics, threshold: float) -> None:
        self.rows.append({
            "run": int(run), "model": model, "precision": metrics.precision,
            "recall": metrics.recall, "f1": metrics.f1, "threshold": float(threshold),
            "defined": metrics.precision_defined and metrics.recall_defined,
        })

    def models(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["model"] not in seen:
                seen.append(r["model"])
        return seen

    def means(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in self.models():
            rows = [r for r in self.rows if r["model"] == name]
            out[name] = {
                k: float(np.mean(sorted(r[k] for r in rows))) for k in ("precision", "recall", "f1")
            }
            out[name]["runs"] = len(rows)
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "model", "precision", "recall", "f1"])
        for r in sorted(self.rows, key=lambda r: (r["model"], r["run"])):
            w.writerow([r["run"], r["model"], "%.17g" % r["precision"], "%.17g" % r["recall"], "%.17g" % r["f1"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        """Plain-text table of mean precision, recall and F1 per model."""
        means = self.means()
        width = max([len("model")] + [len(m) for m in means])
        lines = [
            f"threshold policy: {self.policy}",
            f"{'model':<{width}} | {'Precision':>9} | {'Recall':>9} | {'F1-score':>9} | runs",
            "-" * (width + 42),
        ]
        for name, m in means.items():
            lines.append(
                f"{name:<{width}} | {m['precision']:9.2f} | {m['recall']:9.2f} | {m['f1']:9.2f} | {m['runs']}"
            )
        return "\n".join(lines) + "\n"


def read_metric_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [
            {"run": int(row["run"]), "model": row["model"], "precision": float(row["precision"]),
             "recall": float(row["recall"]), "f1": float(row["f1"])}
            for row in r
        ]
