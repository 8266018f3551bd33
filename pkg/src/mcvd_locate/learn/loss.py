"""Composite training loss and its gradient with respect to the network outputs.

    L = w_pos * MSE(position)
      + w_quat * mean(1 - |<q_hat, q>|)
      + w_tx * MSE(transmitters)
      + w_phys * mean(((|p_hat| - d_count) / phys_scale)^2)    rows with a count distance
      + w_consist * MSE(tx_hat, rigid layout applied to (p_hat, q_hat))

Position and transmitter errors are in standardized units. The physics
residual is in micrometers divided by `phys_scale`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import quat_to_matrix
from . import mlp

TERMS = ("pos", "quat", "tx", "phys", "consist")


@dataclass(frozen=True)
class LossWeights:
    pos: float = 1.0
    quat: float = 0.5
    tx: float = 1.0
    phys: float = 0.1
    consist: float = 0.1

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossContext:
    """Constants that tie standardized outputs back to physical space."""

    pos_mean: np.ndarray
    pos_std: np.ndarray
    tx_mean: np.ndarray
    tx_std: np.ndarray
    tx_local: np.ndarray  # (6, 3)
    phys_scale: float = 1.0


@dataclass
class Batch:
    X: np.ndarray  # (B, 6, 32) standardized tokens
    pos: np.ndarray  # (B, 3) standardized
    quat: np.ndarray  # (B, 4) unit
    tx: np.ndarray  # (B, 18) standardized
    d_count: np.ndarray  # (B,) physics distance target in um, nan where undefined

    def __len__(self):
        return len(self.X)

    def take(self, idx) -> "Batch":
        return Batch(self.X[idx], self.pos[idx], self.quat[idx], self.tx[idx], self.d_count[idx])


# dR/dq for R(q) of a unit quaternion (w, x, y, z); each entry is linear in q
def _dR_dq(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dw = np.stack([zero, -2 * z, 2 * y, 2 * z, zero, -2 * x, -2 * y, 2 * x, zero], axis=1)
    dx = np.stack([zero, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x], axis=1)
    dy = np.stack([-4 * y, 2 * x, 2 * w, 2 * x, zero, 2 * z, -2 * w, 2 * z, -4 * y], axis=1)
    dz = np.stack([-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, zero], axis=1)
    return np.stack([dw, dx, dy, dz], axis=1).reshape(-1, 4, 3, 3)


def loss_terms(pos_hat, quat_hat, tx_hat, batch: Batch, ctx: LossContext):
    """Per-term values and gradients w.r.t. (pos_hat, quat_hat, tx_hat)."""
    B = len(pos_hat)
    vals, g_pos, g_quat, g_tx = {}, {}, {}, {}

    diff = pos_hat - batch.pos
    vals["pos"] = np.mean(diff**2)
    g_pos["pos"] = 2.0 * diff / diff.size

    dot = np.sum(quat_hat * batch.quat, axis=1)
    vals["quat"] = np.mean(1.0 - np.abs(dot))
    g_quat["quat"] = -np.sign(dot)[:, None] * batch.quat / B

    dtx = tx_hat - batch.tx
    vals["tx"] = np.mean(dtx**2)
    g_tx["tx"] = 2.0 * dtx / dtx.size

    p_phys = pos_hat * ctx.pos_std + ctx.pos_mean
    valid = np.isfinite(batch.d_count)
    norm = np.linalg.norm(p_phys, axis=1)
    res = np.where(valid, (norm - np.where(valid, batch.d_count, 0.0)) / ctx.phys_scale, 0.0)
    vals["phys"] = np.sum(res**2) / B
    safe = np.where(norm > 0, norm, 1.0)
    g_p = (2.0 * res / (ctx.phys_scale * B) / safe)[:, None] * p_phys
    g_pos["phys"] = g_p * ctx.pos_std

    # rigid-layout consistency, compared in standardized tx units
    R = quat_to_matrix(quat_hat)
    tw = np.einsum("bij,kj->bki", R, ctx.tx_local) + p_phys[:, None, :]
    tw_std = (tw.reshape(B, -1) - ctx.tx_mean) / ctx.tx_std
    dc = tx_hat - tw_std
    vals["consist"] = np.mean(dc**2)
    g_dc = 2.0 * dc / dc.size
    g_tx["consist"] = g_dc
    g_tw = (-g_dc / ctx.tx_std).reshape(B, -1, 3)
    g_pos["consist"] = g_tw.sum(axis=1) * ctx.pos_std
    M = np.einsum("bki,kj->bij", g_tw, ctx.tx_local)
    g_quat["consist"] = np.einsum("bij,bqij->bq", M, _dR_dq(quat_hat))
    return vals, g_pos, g_quat, g_tx


def compute_loss(params, batch: Batch, weights: LossWeights, ctx: LossContext, need_grad=True):
    """Returns (total, per-term values, parameter gradients or None)."""
    outputs, cache = mlp.forward(params, batch.X)
    vals, g_pos, g_quat, g_tx = loss_terms(outputs["pos"], outputs["quat"], outputs["tx"], batch, ctx)
    w = asdict(weights)
    total = float(sum(w[t] * vals[t] for t in TERMS))
    vals = {t: float(v) for t, v in vals.items()}
    if not need_grad:
        return total, vals, None
    B = len(batch)
    g_out = np.zeros((B, mlp.N_OUT))
    g_out[:, :3] = sum(w[t] * g for t, g in g_pos.items())
    g_out[:, 7:] = sum(w[t] * g for t, g in g_tx.items())
    gq = sum(w[t] * g for t, g in g_quat.items())
    g_out[:, 3:7] = mlp.quat_grad_to_raw(gq, cache)
    return total, vals, mlp.backward(params, cache, g_out)
