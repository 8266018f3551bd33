"""Vectors, quaternions, octants and the six-tube node layout.

Vectors are plain float64 numpy arrays of shape (3,). Quaternions are
(w, x, y, z) arrays of shape (4,). Node B sits at the origin and its body
frame is the global frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Tube directions in the local frame, in fixed index order.
TUBE_AXES = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)
N_TUBES = 6
N_OCTANTS = 8
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def vec3(x, y=None, z=None) -> np.ndarray:
    """Build a finite 3-vector from three scalars or one sequence."""
    v = np.asarray(x if y is None else (x, y, z), dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"expected 3 components, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector {v}")
    return v


def unit(v) -> np.ndarray:
    v = vec3(v)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def octant_index(p) -> int:
    """Octant of `p` by coordinate signs; zero counts as non-negative."""
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError(f"octant_index needs a finite 3-vector, got {p!r}")
    return int(p[0] < 0) + 2 * int(p[1] < 0) + 4 * int(p[2] < 0)


def octant_indices(points: np.ndarray) -> np.ndarray:
    """Vectorised `octant_index` over an (n, 3) array."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    neg = points < 0
    return neg[:, 0] + 2 * neg[:, 1] + 4 * neg[:, 2]


# -- quaternions -------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    return q / n


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = unit(axis)
    s = np.sin(angle / 2.0)
    return np.array([np.cos(angle / 2.0), *(s * axis)])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion. Works row-wise on (..., 4)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotate(q, v) -> np.ndarray:
    """Rotate vector(s) `v` (shape (3,) or (n, 3)) by unit quaternion `q`."""
    return np.asarray(v, dtype=float) @ quat_to_matrix(q).T


# -- layout and pose ---------------------------------------------------------

@dataclass(frozen=True)
class NodeLayout:
    radius: float
    tube_offset: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.tube_offset > 0:
            raise ValueError("tube_offset must be positive (emitter outside the surface)")

    @property
    def tx_local(self) -> np.ndarray:
        """(6, 3) tube tip positions in the node frame."""
        return (self.radius + self.tube_offset) * TUBE_AXES


@dataclass(frozen=True)
class Pose:
    """Node A placement relative to Node B."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(vec3(self.position)))
        object.__setattr__(self, "orientation", _frozen(quat_normalize(self.orientation)))

    def check_separation(self, layout: NodeLayout) -> None:
        min_d = 2 * layout.radius + layout.tube_offset
        if not np.linalg.norm(self.position) > min_d:
            raise ValueError(
                f"|position| = {np.linalg.norm(self.position):.6g} must exceed 2r+delta = {min_d:.6g}"
            )

    def to_world(self, local_points) -> np.ndarray:
        return rotate(self.orientation, local_points) + self.position

    def to_local(self, world_points) -> np.ndarray:
        return rotate(quat_conjugate(self.orientation), np.asarray(world_points) - self.position)


def tx_world_positions(pose: Pose, layout: NodeLayout) -> np.ndarray:
    """(6, 3) world positions of Node A's tube tips."""
    return pose.to_world(layout.tx_local)


def tx_world_batch(positions: np.ndarray, quats: np.ndarray, layout: NodeLayout) -> np.ndarray:
    """Batched tube tips: positions (n, 3), unit quats (n, 4) -> (n, 6, 3)."""
    R = quat_to_matrix(quats)
    return np.einsum("nij,kj->nki", R, layout.tx_local) + positions[:, None, :]
