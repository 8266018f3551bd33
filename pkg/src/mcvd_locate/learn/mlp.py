"""Attention-pooled MLP with hand-written reverse-mode gradients.

Each of the six pilot tokens is embedded by a shared ReLU layer, the
embeddings are pooled with softmax attention weights, and a two-hidden-layer
head maps the pooled vector to 25 outputs:

    [0:3]   Node A position (standardized)
    [3:7]   raw quaternion, normalized on output
    [7:25]  six transmitter positions (standardized)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..features import TOKEN_DIM_FLAT
from ..geometry import N_TUBES

N_OUT = 25
QUAT_FLOOR = 1e-8
PARAM_NAMES = ("W_e", "b_e", "W_a", "q", "W1", "b1", "W2", "b2", "W3", "b3")


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    d_in: int = TOKEN_DIM_FLAT
    h_embed: int = 64
    h_attn: int = 64
    h1: int = 128
    h2: int = 128
    n_out: int = N_OUT


def init_params(arch: Architecture, seed: int) -> dict:
    rng = np.random.default_rng(seed)

    def he(fan_out, fan_in):
        return rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)

    return {
        "W_e": he(arch.h_embed, arch.d_in),
        "b_e": np.zeros(arch.h_embed),
        "W_a": rng.standard_normal((arch.h_attn, arch.h_embed)) / np.sqrt(arch.h_embed),
        "q": rng.standard_normal(arch.h_attn) * 0.1,
        "W1": he(arch.h1, arch.h_embed),
        "b1": np.zeros(arch.h1),
        "W2": he(arch.h2, arch.h1),
        "b2": np.zeros(arch.h2),
        "W3": rng.standard_normal((arch.n_out, arch.h2)) * np.sqrt(1.0 / arch.h2) * 0.1,
        "b3": np.zeros(arch.n_out),
    }


def architecture_of(params: dict) -> Architecture:
    return Architecture(d_in=params["W_e"].shape[1], h_embed=params["W_e"].shape[0],
                        h_attn=params["W_a"].shape[0], h1=params["W1"].shape[0],
                        h2=params["W2"].shape[0], n_out=params["W3"].shape[0])


def _check(name, a):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite activations in layer {name}")


def forward(params: dict, X: np.ndarray) -> tuple[dict, dict]:
    """X: (B, 6, 32) standardized tokens. Returns (outputs, cache)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    z_e = X @ params["W_e"].T + params["b_e"]
    e = np.maximum(z_e, 0.0)
    _check("embed", e)
    u = np.tanh(e @ params["W_a"].T)
    s = u @ params["q"]
    s_max = s.max(axis=1, keepdims=True)
    w = np.exp(s - s_max)
    alpha = w / w.sum(axis=1, keepdims=True)
    _check("attention", alpha)
    pooled = np.einsum("bt,bth->bh", alpha, e)
    z1 = pooled @ params["W1"].T + params["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["W2"].T + params["b2"]
    a2 = np.maximum(z2, 0.0)
    out = a2 @ params["W3"].T + params["b3"]
    _check("output", out)
    raw_q = out[:, 3:7]
    qn = np.linalg.norm(raw_q, axis=1, keepdims=True)
    degenerate = qn[:, 0] < QUAT_FLOOR
    quat = raw_q / np.where(degenerate[:, None], 1.0, qn)
    quat[degenerate] = (1.0, 0.0, 0.0, 0.0)
    outputs = {"pos": out[:, :3], "quat": quat, "tx": out[:, 7:], "alpha": alpha, "out": out}
    cache = {"X": X, "z_e": z_e, "e": e, "u": u, "alpha": alpha, "pooled": pooled,
             "z1": z1, "a1": a1, "z2": z2, "a2": a2, "qn": qn, "degenerate": degenerate,
             "quat": quat}
    return outputs, cache


def quat_grad_to_raw(g_quat, cache) -> np.ndarray:
    """Pull a gradient w.r.t. the normalized quaternion back to the raw slot."""
    quat, qn = cache["quat"], cache["qn"]
    g = (g_quat - quat * np.sum(g_quat * quat, axis=1, keepdims=True)) / qn
    g[cache["degenerate"]] = 0.0
    return g


def backward(params: dict, cache: dict, g_out: np.ndarray) -> dict:
    """Gradients of a scalar loss given dL/d(out) of shape (B, 25)."""
    grads = {}
    a2, a1 = cache["a2"], cache["a1"]
    grads["W3"] = g_out.T @ a2
    grads["b3"] = g_out.sum(axis=0)
    g_z2 = (g_out @ params["W3"]) * (cache["z2"] > 0)
    grads["W2"] = g_z2.T @ a1
    grads["b2"] = g_z2.sum(axis=0)
    g_z1 = (g_z2 @ params["W2"]) * (cache["z1"] > 0)
    grads["W1"] = g_z1.T @ cache["pooled"]
    grads["b1"] = g_z1.sum(axis=0)
    g_pooled = g_z1 @ params["W1"]  # (B, H)

    e, alpha, u = cache["e"], cache["alpha"], cache["u"]
    # pooled = sum_t alpha_t e_t
    g_e = alpha[:, :, None] * g_pooled[:, None, :]
    g_alpha = np.einsum("bth,bh->bt", e, g_pooled)
    g_s = alpha * (g_alpha - np.sum(alpha * g_alpha, axis=1, keepdims=True))
    grads["q"] = np.einsum("bt,bta->a", g_s, u)
    g_pre = g_s[:, :, None] * params["q"] * (1.0 - u * u)  # through tanh
    grads["W_a"] = np.einsum("bta,bth->ah", g_pre, e)
    g_e += g_pre @ params["W_a"]
    g_ze = g_e * (cache["z_e"] > 0)
    grads["W_e"] = np.einsum("bth,btd->hd", g_ze, cache["X"])
    grads["b_e"] = g_ze.sum(axis=(0, 1))
    return grads


def predict(params: dict, X: np.ndarray, batch: int = 1024) -> dict:
    parts = [forward(params, X[i:i + batch])[0] for i in range(0, len(X), batch)]
    return {k: np.concatenate([p[k] for p in parts]) for k in ("pos", "quat", "tx", "alpha")}


def tokens_from_flat(X_flat: np.ndarray) -> np.ndarray:
    return np.asarray(X_flat, dtype=float).reshape(-1, N_TUBES, TOKEN_DIM_FLAT)
