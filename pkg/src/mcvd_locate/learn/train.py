"""Training loop, count-distance prior and model files."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import LAYOUT_VERSION
from ..config import SceneConfig
from ..features import IDX_PILOT_TOTAL, TOKEN_DIM_FLAT
from ..geometry import N_TUBES
from ..rng import derive_seed
from . import mlp
from .augment import symmetric_average
from .loss import TERMS, Batch, LossContext, LossWeights, compute_loss
from .scaler import Scaler

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    def __init__(self, epoch: int, msg: str = "non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {msg}")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_seed: int = 0
    augment: bool = True
    arch: mlp.Architecture = field(default_factory=mlp.Architecture)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr > 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size >= 1, patience >= 1, max_epochs >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train-config keys {sorted(unknown)}")
        if "arch" in d:
            d["arch"] = mlp.Architecture(**d["arch"])
        return cls(**d)


class Adam:
    def __init__(self, params: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -- physics distance target ---------------------------------------------------------

def best_pilot_total(X_flat) -> np.ndarray:
    tokens = np.asarray(X_flat, dtype=float).reshape(-1, N_TUBES, TOKEN_DIM_FLAT)
    return tokens[:, :, IDX_PILOT_TOTAL].max(axis=1)


@dataclass(frozen=True)
class CountPrior:
    """Distance implied by the strongest pilot's count, d = r N / n.

    Node A reabsorbs most of its own pilots, so the raw inversion overshoots
    by a large factor. With `calibrated`, a power law
    log d = a + b log(r N / n) fitted on training rows maps it back to
    node distance; otherwise the raw inversion is used.
    """

    r: float
    N: int
    a: float = 0.0
    b: float = 1.0
    calibrated: bool = False

    def raw(self, n_best) -> np.ndarray:
        n = np.asarray(n_best, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(n > 0, self.r * self.N / np.where(n > 0, n, 1.0), np.nan)

    def __call__(self, n_best) -> np.ndarray:
        d = self.raw(n_best)
        if not self.calibrated:
            return d
        return np.exp(self.a + self.b * np.log(d))

    @classmethod
    def fit(cls, cfg: SceneConfig, n_best, true_dist) -> "CountPrior":
        prior = cls(cfg.r, cfg.N)
        d = prior.raw(n_best)
        ok = np.isfinite(d)
        if ok.sum() < 2 or np.ptp(np.log(d[ok])) == 0:
            return prior
        b, a = np.polyfit(np.log(d[ok]), np.log(np.asarray(true_dist)[ok]), 1)
        return cls(cfg.r, cfg.N, float(a), float(b), True)


# -- data plumbing ------------------------------------------------------------------

def make_context(scaler: Scaler, cfg: SceneConfig, phys_scale: float | None = None) -> LossContext:
    """Loss constants; the physics residual is scaled by the RMS position std by default."""
    if phys_scale is None:
        phys_scale = float(np.sqrt(np.mean(scaler.pos_std**2)))
    return LossContext(scaler.pos_mean, scaler.pos_std, scaler.tx_mean, scaler.tx_std,
                       cfg.layout.tx_local, phys_scale)


def make_batch(arrays: dict, scaler: Scaler, prior: CountPrior) -> Batch:
    X = mlp.tokens_from_flat(scaler.apply(arrays["X"]))
    Y = scaler.apply_targets(np.hstack([arrays["pos"], arrays["tx"]]))
    return Batch(X, Y[:, :3], arrays["quat"], Y[:, 3:], prior(best_pilot_total(arrays["X"])))


def evaluate(params, batch: Batch, weights: LossWeights, ctx: LossContext) -> tuple[float, dict]:
    total, vals, _ = compute_loss(params, batch, weights, ctx, need_grad=False)
    return total, vals


def train(train_batch: Batch, val_batch: Batch, tcfg: TrainConfig, weights: LossWeights,
          ctx: LossContext, progress=None, resample=None):
    """Adam on mini-batches with early stopping on validation loss.

    `resample(rng)`, if given, supplies a fresh (e.g. augmented) training
    batch for each epoch; losses reported in the history always use
    `train_batch` itself. Returns (best params, history) with one history
    row per finished epoch.
    """
    params = mlp.init_params(tcfg.arch, tcfg.init_seed)
    history = []
    if tcfg.max_epochs == 0:
        return params, history
    if not np.any(np.isfinite(train_batch.d_count)) and weights.phys > 0:
        log.info("no defined count distances; physics term contributes 0")
    opt = Adam(params, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps)
    best = (math.inf, copy.deepcopy(params))
    stale = 0
    n = len(train_batch)
    for epoch in range(tcfg.max_epochs):
        rng = np.random.default_rng(derive_seed(tcfg.init_seed, epoch))
        epoch_batch = train_batch if resample is None else resample(rng)
        order = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            mb = epoch_batch.take(order[start:start + tcfg.batch_size])
            try:
                total, _, grads = compute_loss(params, mb, weights, ctx)
            except mlp.NumericError as e:
                raise TrainingDivergence(epoch, str(e)) from None
            if not math.isfinite(total):
                raise TrainingDivergence(epoch)
            opt.step(params, grads)
        try:
            tr_total, tr_terms = evaluate(params, train_batch, weights, ctx)
            va_total, va_terms = evaluate(params, val_batch, weights, ctx)
        except mlp.NumericError as e:
            raise TrainingDivergence(epoch, str(e)) from None
        if not (math.isfinite(tr_total) and math.isfinite(va_total)):
            raise TrainingDivergence(epoch)
        row = {"epoch": epoch, "train_total": tr_total, "val_total": va_total}
        row |= {f"train_{t}": tr_terms[t] for t in TERMS} | {f"val_{t}": va_terms[t] for t in TERMS}
        history.append(row)
        if progress is not None:
            progress(row)
        if va_total < best[0]:
            best = (va_total, copy.deepcopy(params))
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    return best[1], history


def write_history_csv(history, path) -> None:
    cols = ["epoch", "train_total", "val_total"] + [f"{s}_{t}" for s in ("train", "val") for t in TERMS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in cols[1:]])


# -- model file ---------------------------------------------------------------------

@dataclass
class TrainedModel:
    params: dict
    scaler: Scaler
    prior: CountPrior
    scene: SceneConfig
    weights: LossWeights = field(default_factory=LossWeights)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    meta: dict = field(default_factory=dict)

    def predict(self, X_flat, symmetric: bool = True) -> dict:
        """Physical-unit predictions from raw (unscaled) flattened features.

        With `symmetric`, outputs are averaged over the 24 cube rotations of
        the input (attention weights then come from the unrotated pass).
        """
        if symmetric:
            out = symmetric_average(lambda X: self.predict(X, symmetric=False), X_flat)
            out["alpha"] = self.predict(X_flat, symmetric=False)["alpha"]
            return out
        X = mlp.tokens_from_flat(self.scaler.apply(np.asarray(X_flat).reshape(-1, N_TUBES * TOKEN_DIM_FLAT)))
        out = mlp.predict(self.params, X)
        Y = self.scaler.invert_targets(np.hstack([out["pos"], out["tx"]]))
        return {"pos": Y[:, :3], "quat": out["quat"], "tx": Y[:, 3:], "alpha": out["alpha"]}

    def to_dict(self) -> dict:
        tc = asdict(self.train_config)
        return {
            "layout_version": LAYOUT_VERSION,
            "scene": self.scene.to_dict(),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "scaler": self.scaler.to_dict(),
            "prior": asdict(self.prior),
            "loss_weights": asdict(self.weights),
            "train_config": tc,
            "meta": self.meta,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{path}: malformed model file ({e})") from None
        if d.get("layout_version") != LAYOUT_VERSION:
            raise ModelFormatError(
                f"{path}: layout version {d.get('layout_version')!r}, expected {LAYOUT_VERSION!r}")
        params = {k: np.array(v, dtype=float) for k, v in d["params"].items()}
        if set(params) != set(mlp.PARAM_NAMES):
            raise ModelFormatError(f"{path}: parameter set does not match the architecture")
        return cls(params, Scaler.from_dict(d["scaler"]), CountPrior(**d["prior"]),
                   SceneConfig.from_dict(d["scene"]), LossWeights(**d["loss_weights"]),
                   TrainConfig.from_dict(d["train_config"]), d.get("meta", {}))
