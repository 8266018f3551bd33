"""Central finite-difference check of the composite-loss gradients on a small model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import TUBE_AXES
from . import mlp
from .loss import Batch, LossContext, LossWeights, compute_loss

REDUCED = mlp.Architecture(h_embed=8, h_attn=8, h1=8, h2=8)
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class GradCheck:
    worst_rel: float
    n_draws: int
    n_rejected: int


def random_problem(rng, arch=REDUCED, batch=4):
    params = mlp.init_params(arch, int(rng.integers(2**31)))
    # wake up the small-scale output layer so every term has a sizeable gradient
    params["W3"] *= 10.0
    for k in ("b_e", "b1", "b2", "b3"):
        params[k] = rng.normal(scale=0.3, size=params[k].shape)
    q = rng.normal(size=(batch, 4))
    d = rng.uniform(15, 60, batch)
    d[0] = np.nan
    b = Batch(rng.normal(size=(batch, 6, arch.d_in)), rng.normal(size=(batch, 3)),
              q / np.linalg.norm(q, axis=1, keepdims=True), rng.normal(size=(batch, 18)), d)
    ctx = LossContext(rng.normal(size=3), rng.uniform(5, 20, 3), rng.normal(size=18),
                      rng.uniform(5, 20, 18), 5.5 * TUBE_AXES, float(rng.uniform(5, 20)))
    w = LossWeights(*rng.uniform(0.1, 1.0, 5))
    return params, b, ctx, w


def _near_kink(params, batch) -> bool:
    out, c = mlp.forward(params, batch.X)
    z = np.concatenate([c["z_e"].ravel(), c["z1"].ravel(), c["z2"].ravel()])
    dot = np.sum(out["quat"] * batch.quat, axis=1)
    return bool(np.min(np.abs(z)) < KINK_MARGIN or np.min(np.abs(dot)) < KINK_MARGIN
                or np.min(c["qn"]) < KINK_MARGIN)


def relative_error(analytic, numeric, floor=1e-7) -> float:
    """||a - n|| / max(||a||, ||n||, floor) over one parameter tensor.

    Measured per tensor rather than per entry: entries of size ~1e-8 carry
    finite-difference roundoff of ~1e-11, which no per-entry ratio survives.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def check_gradients(n_draws: int = 50, seed: int = 0, h: float = 1e-5) -> GradCheck:
    """Worst entrywise relative error over `n_draws` random problems.

    Draws with a ReLU input, quaternion inner product or quaternion norm
    within KINK_MARGIN of a non-differentiable point are redrawn.
    """
    rng = np.random.default_rng(seed)
    worst, rejected, done = 0.0, 0, 0
    while done < n_draws:
        params, batch, ctx, w = random_problem(rng)
        if _near_kink(params, batch):
            rejected += 1
            continue
        _, _, grads = compute_loss(params, batch, w, ctx)
        for name in mlp.PARAM_NAMES:
            p = params[name]
            num = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                fp = compute_loss(params, batch, w, ctx, need_grad=False)[0]
                p[i] = old - h
                fm = compute_loss(params, batch, w, ctx, need_grad=False)[0]
                p[i] = old
                num[i] = (fp - fm) / (2 * h)
            worst = max(worst, relative_error(grads[name], num))
        done += 1
    return GradCheck(worst, done, rejected)
