"""Exact symmetry augmentation.

Rotating the whole scene about Node B by one of the 24 proper rotations of
the cube maps B's octants onto octants, so a simulated sample turns into
another valid sample without re-simulating: octant blocks are permuted, the
centroid direction and all position labels rotate, and the orientation label
is pre-multiplied by the rotation.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..features import IDX_CENTROID, TOKEN_DIM_FLAT
from ..geometry import N_OCTANTS, N_TUBES, octant_index, quat_multiply


def _quat_from_matrix(R) -> np.ndarray:
    w = np.sqrt(max(0.0, 1.0 + np.trace(R))) / 2.0
    if w > 1e-6:
        return np.array([w, (R[2, 1] - R[1, 2]) / (4 * w), (R[0, 2] - R[2, 0]) / (4 * w),
                         (R[1, 0] - R[0, 1]) / (4 * w)])
    # 180-degree rotations: axis from the diagonal
    x = np.sqrt(max(0.0, (1 + R[0, 0]) / 2))
    y = np.sqrt(max(0.0, (1 + R[1, 1]) / 2))
    z = np.sqrt(max(0.0, (1 + R[2, 2]) / 2))
    if x > 1e-6:
        y, z = np.copysign(y, R[0, 1]), np.copysign(z, R[0, 2])
    elif y > 1e-6:
        z = np.copysign(z, R[1, 2])
    return np.array([0.0, x, y, z])


def cube_rotations() -> list[np.ndarray]:
    """The 24 signed permutation matrices with determinant +1 (identity first)."""
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            M = np.zeros((3, 3))
            M[range(3), perm] = signs
            if np.linalg.det(M) > 0:
                mats.append(M)
    mats.sort(key=lambda M: -np.trace(M))
    return mats


ROTATIONS = cube_rotations()
ROTATION_QUATS = [_quat_from_matrix(M) for M in ROTATIONS]
_CORNERS = [np.array([-1.0 if (k >> a) & 1 else 1.0 for a in range(3)]) for k in range(N_OCTANTS)]
OCTANT_MAPS = [np.array([octant_index(M @ c) for c in _CORNERS]) for M in ROTATIONS]


def rotate_sample(X_flat, pos, quat, tx, g: int):
    """Apply cube rotation `g` to raw flattened features and physical labels (batched)."""
    M, qg, omap = ROTATIONS[g], ROTATION_QUATS[g], OCTANT_MAPS[g]
    X = np.array(X_flat, dtype=float).reshape(-1, N_TUBES, TOKEN_DIM_FLAT)
    out = X.copy()
    for k in range(N_OCTANTS):
        out[:, :, 3 * omap[k]:3 * omap[k] + 3] = X[:, :, 3 * k:3 * k + 3]
    out[:, :, IDX_CENTROID] = X[:, :, IDX_CENTROID] @ M.T
    pos2 = np.asarray(pos) @ M.T
    quat2 = np.array([quat_multiply(qg, q) for q in np.asarray(quat).reshape(-1, 4)])
    tx2 = (np.asarray(tx).reshape(-1, N_TUBES, 3) @ M.T).reshape(-1, 3 * N_TUBES)
    return out.reshape(len(X), -1), pos2, quat2, tx2


def orbit_arrays(arrays: dict) -> dict:
    """All 24 rotated copies of every row, stacked rotation-major."""
    parts = [rotate_sample(arrays["X"], arrays["pos"], arrays["quat"], arrays["tx"], g)
             for g in range(len(ROTATIONS))]
    return {k: np.concatenate([p[i] for p in parts]) for i, k in enumerate(("X", "pos", "quat", "tx"))}


def augment_arrays(arrays: dict, rng: np.random.Generator) -> dict:
    """Each row gets an independent random cube rotation."""
    g = rng.integers(0, len(ROTATIONS), size=len(arrays["X"]))
    out = {k: np.array(v, copy=True) for k, v in arrays.items()}
    for gi in np.unique(g):
        rows = np.flatnonzero(g == gi)
        X, p, q, t = rotate_sample(arrays["X"][rows], arrays["pos"][rows], arrays["quat"][rows],
                                   arrays["tx"][rows], int(gi))
        out["X"][rows], out["pos"][rows], out["quat"][rows], out["tx"][rows] = X, p, q, t
    return out


def symmetric_average(predict, X_flat) -> dict:
    """Average `predict` over all 24 rotated copies of the input, mapped back.

    `predict(X)` must return physical-unit "pos", "quat" and "tx". Orientation
    estimates are sign-aligned to the unrotated one before averaging.
    """
    X_flat = np.asarray(X_flat, dtype=float).reshape(-1, N_TUBES * TOKEN_DIM_FLAT)
    n = len(X_flat)
    zero3, ident = np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1))
    pos = np.zeros((n, 3))
    tx = np.zeros((n, 3 * N_TUBES))
    quat = np.zeros((n, 4))
    ref = None
    for g, M in enumerate(ROTATIONS):
        Xg = rotate_sample(X_flat, zero3, ident, np.zeros((n, 3 * N_TUBES)), g)[0]
        out = predict(Xg)
        pos += out["pos"] @ M
        tx += (out["tx"].reshape(n, N_TUBES, 3) @ M).reshape(n, -1)
        qg_inv = ROTATION_QUATS[g] * np.array([1.0, -1, -1, -1])
        q = np.array([quat_multiply(qg_inv, qi) for qi in out["quat"]])
        if ref is None:
            ref = q
        q *= np.where(np.sum(q * ref, axis=1) < 0, -1.0, 1.0)[:, None]
        quat += q
    k = len(ROTATIONS)
    quat /= np.linalg.norm(quat, axis=1, keepdims=True)
    return {"pos": pos / k, "quat": quat, "tx": tx / k}
