"""Stage functions shared by the CLI and the experiment scripts."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import evalkit
from .config import SceneConfig
from .dataset import SplitSpec, as_arrays, split
from .learn.augment import ROTATIONS, augment_arrays, orbit_arrays
from .learn.loss import LossWeights
from .learn.ridge import DEFAULT_ALPHA_GRID, add_intercept, ridge_fit, ridge_predict, select_ridge_alpha
from .learn.scaler import Scaler
from .learn.train import (CountPrior, TrainConfig, TrainedModel, best_pilot_total, make_batch,
                          make_context, train)

log = logging.getLogger(__name__)


class LeakageError(AssertionError):
    pass


@dataclass
class Splits:
    train: dict
    val: dict
    test: dict


def _subset(arrays: dict, ids) -> dict:
    pos = {int(s): i for i, s in enumerate(arrays["ids"])}
    idx = np.array([pos[int(s)] for s in ids], dtype=np.int64)
    return {k: v[idx] for k, v in arrays.items()}


def make_splits(records, spec: SplitSpec = SplitSpec()) -> Splits:
    arrays = as_arrays(records)
    tr, va, te = split(arrays["ids"], spec)
    return Splits(_subset(arrays, tr), _subset(arrays, va), _subset(arrays, te))


def targets(arrays: dict) -> np.ndarray:
    return np.hstack([arrays["pos"], arrays["tx"]])


def fit_scaler(splits: Splits, symmetric: bool = False) -> Scaler:
    """Fit on the training split; with `symmetric`, on its 24 rotated copies as well.

    The symmetric fit matches the statistics the network sees under
    rotation augmentation, so no column of a rotated sample is standardized
    by a degenerate (floored) deviation.
    """
    if symmetric:
        rows = orbit_arrays(splits.train)
        scaler = Scaler().fit(rows["X"], targets(rows), expansion=len(ROTATIONS))
    else:
        scaler = Scaler().fit(splits.train["X"], targets(splits.train))
    check_scaler(scaler, splits)
    return scaler


def check_scaler(scaler: Scaler, splits: Splits) -> None:
    n_train = len(splits.train["ids"])
    if scaler.n_fit_rows != scaler.expansion * n_train:
        raise LeakageError(
            f"scaler was fitted on {scaler.n_fit_rows} rows but the training split has "
            f"{n_train} (x{scaler.expansion}): possible leakage of validation/test rows")


def train_model(splits: Splits, cfg: SceneConfig, tcfg: TrainConfig = TrainConfig(),
                weights: LossWeights = LossWeights(), calibrate_prior: bool = True,
                scaler: Scaler | None = None, progress=None):
    scaler = scaler or fit_scaler(splits, symmetric=tcfg.augment)
    check_scaler(scaler, splits)
    n_best = best_pilot_total(splits.train["X"])
    if calibrate_prior:
        prior = CountPrior.fit(cfg, n_best, np.linalg.norm(splits.train["pos"], axis=1))
    else:
        prior = CountPrior(cfg.r, cfg.N)
    ctx = make_context(scaler, cfg)
    tb = make_batch(splits.train, scaler, prior)
    vb = make_batch(splits.val, scaler, prior)
    def augmented(rng):
        return make_batch(augment_arrays(splits.train, rng), scaler, prior)

    resample = augmented if tcfg.augment else None
    params, history = train(tb, vb, tcfg, weights, ctx, progress=progress, resample=resample)
    model = TrainedModel(params, scaler, prior, cfg, weights, tcfg,
                         {"n_train": len(tb), "n_val": len(vb)})
    return model, history


def ridge_baseline(splits: Splits, scaler: Scaler, grid=DEFAULT_ALPHA_GRID):
    """Tuned ridge on the same standardized features; returns (alpha, test predictions)."""
    Xtr = add_intercept(scaler.apply(splits.train["X"]))
    Xva = add_intercept(scaler.apply(splits.val["X"]))
    Xte = add_intercept(scaler.apply(splits.test["X"]))
    Ytr = scaler.apply_targets(targets(splits.train))
    Yva = scaler.apply_targets(targets(splits.val))
    alpha = select_ridge_alpha(Xtr, Ytr, Xva, Yva, grid)
    W = ridge_fit(Xtr, Ytr, alpha)
    Y = scaler.invert_targets(ridge_predict(W, Xte))
    return alpha, {"pos": Y[:, :3], "tx": Y[:, 3:]}


def evaluate_model(model: TrainedModel, splits: Splits, grid=DEFAULT_ALPHA_GRID) -> dict:
    """Test-split metrics for the model and the ridge baseline."""
    test = splits.test
    pred = model.predict(test["X"])
    m = evalkit.report(test["pos"], pred["pos"], test["tx"], pred["tx"])
    alpha, rp = ridge_baseline(splits, fit_scaler(splits), grid)
    b = evalkit.report(test["pos"], rp["pos"], test["tx"], rp["tx"])
    return {"model": m, "ridge": b, "ridge_alpha": alpha, "reduction": evalkit.compare(m, b),
            "pred": pred, "ridge_pred": rp}
