"""Regression metrics, model-vs-baseline comparison and CSV exports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

AXES = "xyz"


class UndefinedMetricError(ValueError):
    pass


def r_squared(truth, pred) -> float:
    truth = np.asarray(truth, dtype=float).reshape(-1)
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if truth.shape != pred.shape:
        raise ValueError("shape mismatch")
    if len(truth) < 2:
        raise UndefinedMetricError("R^2 needs at least two rows")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetricError("R^2 is undefined for a constant truth column")
    return float(1.0 - np.sum((truth - pred) ** 2) / ss_tot)


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("empty input")
    return truth, pred


def mae(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.mean(np.abs(truth - pred)))


def rmse(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


@dataclass(frozen=True)
class MetricsReport:
    r2_axes: tuple
    r2_mean: float
    r2_pooled: float
    mae: float
    rmse: float
    tx_mae: float
    tx_rmse: float
    n: int

    def __post_init__(self):
        for a, b in ((self.mae, self.rmse), (self.tx_mae, self.tx_rmse)):
            # power-mean inequality, with room for rounding
            assert 0 <= a <= b * (1 + 1e-12) + 1e-15, (a, b)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r2_axes"] = dict(zip(AXES, self.r2_axes))
        return d


def report(pos_true, pos_pred, tx_true, tx_pred) -> MetricsReport:
    pos_true, pos_pred = _pair(pos_true, pos_pred)
    tx_true, tx_pred = _pair(tx_true, tx_pred)
    r2 = tuple(r_squared(pos_true[:, i], pos_pred[:, i]) for i in range(3))
    pooled = 1.0 - np.sum((pos_true - pos_pred) ** 2) / np.sum((pos_true - pos_true.mean(axis=0)) ** 2)
    return MetricsReport(r2, float(np.mean(r2)), float(pooled), mae(pos_true, pos_pred),
                         rmse(pos_true, pos_pred), mae(tx_true, tx_pred), rmse(tx_true, tx_pred),
                         len(pos_true))


def compare(model: MetricsReport, baseline: MetricsReport) -> dict:
    """Fractional error reduction of the model relative to the baseline."""
    out = {}
    for name in ("mae", "rmse", "tx_mae", "tx_rmse"):
        b = getattr(baseline, name)
        if b == 0:
            raise UndefinedMetricError(f"baseline {name} is zero; reduction undefined")
        out[name] = (b - getattr(model, name)) / b
    return out


def format_reduction(red: dict) -> str:
    return f"MAE reduced by {100 * red['mae']:.1f}%, RMSE reduced by {100 * red['rmse']:.1f}%"


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def export_scatter(pos_true, pos_pred, path) -> None:
    """Long-format (axis, truth, prediction) rows for predicted-vs-truth plots."""
    pos_true, pos_pred = _pair(pos_true, pos_pred)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "truth", "prediction"])
        for i, ax in enumerate(AXES):
            for t, p in zip(pos_true[:, i], pos_pred[:, i]):
                w.writerow([ax, repr(float(t)), repr(float(p))])


def pick_examples(ids, k: int = 5, seed: int = 0) -> np.ndarray:
    ids = np.sort(np.asarray(ids))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(ids, size=min(k, len(ids)), replace=False))


def export_3d(ids, pos_true, pos_pred, tx_true, tx_pred, path, k: int = 5, seed: int = 0) -> np.ndarray:
    """Truth and prediction for k sampled test rows: node centre plus six tube tips."""
    ids = np.asarray(ids)
    chosen = pick_examples(ids, k, seed)
    row_of = {int(s): i for i, s in enumerate(ids)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "point", "source", "x", "y", "z"])
        for sid in chosen:
            i = row_of[int(sid)]
            for src, pos, tx in (("truth", pos_true, tx_true), ("prediction", pos_pred, tx_pred)):
                pts = [("nodeA", pos[i])] + [(f"tx{k}", tx[i].reshape(-1, 3)[k]) for k in range(6)]
                for name, p in pts:
                    w.writerow([int(sid), name, src] + [repr(float(v)) for v in p])
    return chosen


def read_scatter(path) -> list[tuple[str, float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(a, float(t), float(p)) for a, t, p in rows]
