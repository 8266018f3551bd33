"""Monte Carlo pilot transmissions between two absorbing spheres.

Molecules take Euler-Maruyama Brownian steps. A molecule is absorbed when a
step segment crosses a sphere; the absorption time is interpolated linearly
along the segment. While a molecule is far from every absorbing surface,
consecutive steps are merged into one Gaussian jump with the summed
variance (see `block_sigmas`): the merged jump has exactly the distribution
of the summed steps, and the chance that any of the skipped intermediate
segments would have reached a sphere is below exp(-block_sigmas**2 / 2).

A step whose chord misses both spheres can still hide a crossing of the
continuous path. Each such step is absorbed with the Brownian-bridge
probability exp(-2 g0 g1 / s^2) (g0, g1: endpoint gaps to the surface, s^2:
per-axis step variance), which removes the O(sqrt(dt)) under-absorption of
a plain segment test. The event time then interpolates at g0 / (g0 + g1).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .config import SceneConfig, validate_config
from .geometry import N_TUBES, Pose, tx_world_positions
from .rng import derive, derive_seed, normal_pair, uniform

NODE_A = 0
NODE_B = 1
LOST = -1
ABSORBER_NAMES = {NODE_A: "A", NODE_B: "B"}

#: merge steps only while the nearest surface is this many jump-sigmas away
BLOCK_SIGMAS = 8.0


class SimulationError(ValueError):
    pass


@njit(cache=True)
def _segment_hit(px, py, pz, dx, dy, dz, cx, cy, cz, r):
    """Smallest s in [0, 1] with |p + s d - c| = r, or 2.0 if none."""
    ox = px - cx
    oy = py - cy
    oz = pz - cz
    a = dx * dx + dy * dy + dz * dz
    if a == 0.0:
        return 2.0
    b = ox * dx + oy * dy + oz * dz
    c = ox * ox + oy * oy + oz * oz - r * r
    if c <= 0.0:
        return 0.0
    if b >= 0.0:
        return 2.0
    disc = b * b - a * c
    if disc < 0.0:
        return 2.0
    # stable root of a s^2 + 2 b s + c = 0 nearest to the origin
    s = c / (-b + math.sqrt(disc))
    if s <= 1.0:
        return s
    return 2.0


@njit(cache=True, error_model="numpy")
def _walk(key, x0, y0, z0, centers, active, r, sigma, dt, n_steps,
          cull_c, cull_r2, block_sigmas):
    """Follow one molecule; returns (absorber, time, sx, sy, sz)."""
    x, y, z = x0, y0, z0
    step = 0
    ctr = np.uint64(0)
    two = np.uint64(2)
    one = np.uint64(1)
    spare = 0.0
    have_spare = False
    while step < n_steps:
        m = 1
        if sigma == 0.0:
            m = n_steps - step
        elif block_sigmas > 0.0:
            rho = np.inf
            for k in range(2):
                if active[k]:
                    g = math.sqrt((x - centers[k, 0]) ** 2 + (y - centers[k, 1]) ** 2
                                  + (z - centers[k, 2]) ** 2) - r
                    if g < rho:
                        rho = g
            lim = rho / (block_sigmas * sigma)
            lim2 = lim * lim
            if lim2 >= 2.0:
                if lim2 >= n_steps - step:
                    m = n_steps - step
                else:
                    m = int(lim2)
        scale = sigma * math.sqrt(m)
        g1, g2 = normal_pair(key, ctr)
        ctr += two
        if have_spare:
            g3 = spare
            have_spare = False
        else:
            g3, spare = normal_pair(key, ctr)
            ctr += two
            have_spare = True
        dx = scale * g1
        dy = scale * g2
        dz = scale * g3
        best = 2.0
        hit = -1
        for k in range(2):
            if active[k]:
                s = _segment_hit(x, y, z, dx, dy, dz, centers[k, 0], centers[k, 1], centers[k, 2], r)
                if s < best:
                    best = s
                    hit = k
        if hit < 0 and scale > 0.0:
            # the path between two outside endpoints may still have touched a
            # sphere; planar Brownian-bridge crossing probability
            var = scale * scale
            for k in range(2):
                if active[k] and hit < 0:
                    gap0 = math.sqrt((x - centers[k, 0]) ** 2 + (y - centers[k, 1]) ** 2
                                     + (z - centers[k, 2]) ** 2) - r
                    gap1 = math.sqrt((x + dx - centers[k, 0]) ** 2 + (y + dy - centers[k, 1]) ** 2
                                     + (z + dz - centers[k, 2]) ** 2) - r
                    e = 2.0 * gap0 * gap1 / var
                    if e < 40.0:
                        u = uniform(key, ctr)
                        ctr += one
                        if u < math.exp(-e):
                            hit = k
                            best = gap0 / (gap0 + gap1)
        if hit >= 0:
            hx = x + best * dx - centers[hit, 0]
            hy = y + best * dy - centers[hit, 1]
            hz = z + best * dz - centers[hit, 2]
            nrm = math.sqrt(hx * hx + hy * hy + hz * hz)
            f = r / nrm
            t = (step + best * m) * dt
            return hit, t, centers[hit, 0] + hx * f, centers[hit, 1] + hy * f, centers[hit, 2] + hz * f
        x += dx
        y += dy
        z += dz
        step += m
        if (x - cull_c[0]) ** 2 + (y - cull_c[1]) ** 2 + (z - cull_c[2]) ** 2 > cull_r2:
            break
    return -1, 0.0, 0.0, 0.0, 0.0


@njit(parallel=True, cache=True, error_model="numpy")
def _simulate_batch(starts, keys, n_mol, centers, active, r, sigma, dt, n_steps,
                    cull_c, cull_r, block_sigmas):
    n_src = starts.shape[0]
    total = n_src * n_mol
    absorber = np.empty(total, np.int8)
    times = np.empty(total)
    points = np.empty((total, 3))
    cull_r2 = cull_r * cull_r
    for i in prange(total):
        src = i // n_mol
        mol = i - src * n_mol
        key = derive(keys[src], np.uint64(mol))
        a, t, sx, sy, sz = _walk(key, starts[src, 0], starts[src, 1], starts[src, 2],
                                 centers, active, r, sigma, dt, n_steps, cull_c, cull_r2,
                                 block_sigmas)
        absorber[i] = a
        times[i] = t
        points[i, 0] = sx
        points[i, 1] = sy
        points[i, 2] = sz
    return absorber, times, points


def simulate_sources(starts, keys, n_mol, centers, active, r, sigma, dt, n_steps,
                     cull_center, cull_radius, block_sigmas=BLOCK_SIGMAS):
    """Low-level entry: every source emits `n_mol` molecules.

    Returns per-molecule (absorber, time, surface point) arrays of shape
    (n_src, n_mol[, 3]); absorber is NODE_A, NODE_B or LOST.
    """
    starts = np.ascontiguousarray(starts, dtype=np.float64).reshape(-1, 3)
    keys = np.ascontiguousarray(keys, dtype=np.uint64).reshape(-1)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(2, 3)
    active = np.ascontiguousarray(active, dtype=np.bool_).reshape(2)
    cull_center = np.ascontiguousarray(cull_center, dtype=np.float64).reshape(3)
    absorber, times, points = _simulate_batch(
        starts, keys, int(n_mol), centers, active, float(r), float(sigma), float(dt),
        int(n_steps), cull_center, float(cull_radius), float(block_sigmas))
    n_src = starts.shape[0]
    return (absorber.reshape(n_src, n_mol), times.reshape(n_src, n_mol),
            points.reshape(n_src, n_mol, 3))


@dataclass(frozen=True)
class PilotResult:
    """Absorption events of one pilot, sorted by (time, molecule_id)."""

    pilot_id: int
    times: np.ndarray  # (k,)
    points: np.ndarray  # (k, 3) surface points, world frame
    absorber: np.ndarray  # (k,) NODE_A / NODE_B
    molecule_ids: np.ndarray  # (k,)
    n_lost: int

    @property
    def n_events(self) -> int:
        return len(self.times)

    @property
    def n_emitted(self) -> int:
        return self.n_events + self.n_lost

    def at(self, node: int) -> "PilotResult":
        """Events absorbed by one node only (n_lost kept)."""
        keep = self.absorber == node
        return PilotResult(self.pilot_id, self.times[keep], self.points[keep],
                           self.absorber[keep], self.molecule_ids[keep], self.n_lost)

    @classmethod
    def from_molecules(cls, pilot_id, absorber, times, points) -> "PilotResult":
        ids = np.flatnonzero(absorber != LOST)
        order = np.lexsort((ids, times[ids]))
        ids = ids[order]
        return cls(pilot_id, times[ids].copy(), points[ids].copy(),
                   absorber[ids].astype(np.int8), ids.astype(np.int64),
                   int(np.count_nonzero(absorber == LOST)))


@dataclass(frozen=True)
class AbsorptionLog:
    pilots: tuple  # 6 PilotResult, pilot_id == index
    scene: SceneConfig
    pose_A: Pose

    def __post_init__(self):
        if len(self.pilots) != N_TUBES or any(p.pilot_id != i for i, p in enumerate(self.pilots)):
            raise ValueError("an absorption log holds exactly 6 pilots in id order")


def _pilot_key(sample_seed: int, pilot_id: int) -> np.uint64:
    return np.uint64(derive_seed(sample_seed, pilot_id))


def _scene_geometry(cfg: SceneConfig, pose_A: Pose):
    centers = np.vstack([pose_A.position, np.zeros(3)])
    tx = tx_world_positions(pose_A, cfg.layout)
    for k, p in enumerate(tx):
        for c, name in zip(centers, "AB"):
            if np.linalg.norm(p - c) <= cfg.r:
                raise SimulationError(f"emission point of tube {k} lies inside node {name}")
    return centers, tx, centers.mean(axis=0)


def simulate_pilot(cfg: SceneConfig, pose_A: Pose, pilot_id: int, sample_seed: int,
                   block_sigmas: float = BLOCK_SIGMAS) -> PilotResult:
    if not 0 <= pilot_id < N_TUBES:
        raise ValueError(f"pilot_id must be in [0, 5], got {pilot_id}")
    return _run(cfg, pose_A, [pilot_id], sample_seed, block_sigmas)[0]


def simulate_scene(cfg: SceneConfig, pose_A: Pose, sample_seed: int,
                   block_sigmas: float = BLOCK_SIGMAS) -> AbsorptionLog:
    """All six pilots, each in its own isolated window."""
    pilots = _run(cfg, pose_A, list(range(N_TUBES)), sample_seed, block_sigmas)
    return AbsorptionLog(tuple(pilots), cfg, pose_A)


def _run(cfg, pose_A, pilot_ids, sample_seed, block_sigmas):
    validate_config(cfg)
    centers, tx, mid = _scene_geometry(cfg, pose_A)
    keys = np.array([_pilot_key(sample_seed, p) for p in pilot_ids], dtype=np.uint64)
    absorber, times, points = simulate_sources(
        tx[pilot_ids], keys, cfg.N, centers, (True, True), cfg.r, cfg.sigma, cfg.dt,
        cfg.n_steps, mid, cfg.cull_radius, block_sigmas)
    return [PilotResult.from_molecules(p, absorber[i], times[i], points[i])
            for i, p in enumerate(pilot_ids)]


def simulate_single_sphere(r: float, d: float, D: float, dt: float, T: float, N: int,
                           seed: int, cull_radius: float = 1000.0,
                           block_sigmas: float = BLOCK_SIGMAS) -> PilotResult:
    """One emitter at distance d from a lone absorbing sphere at the origin."""
    centers = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    absorber, times, points = simulate_sources(
        np.array([[d, 0.0, 0.0]]), np.array([derive_seed(seed, 0)], dtype=np.uint64), N,
        centers, (False, True), r, math.sqrt(2 * D * dt), dt, int(round(T / dt)),
        np.zeros(3), cull_radius, block_sigmas)
    return PilotResult.from_molecules(0, absorber[0], times[0], points[0])


def classify_paths(result: PilotResult) -> dict:
    """Counts of lost molecules and of absorptions at each node."""
    to_a = int(np.count_nonzero(result.absorber == NODE_A))
    to_b = int(np.count_nonzero(result.absorber == NODE_B))
    return {"lost": result.n_lost, "to_B": to_b, "to_A": to_a}


# -- CSV persistence -----------------------------------------------------------

LOG_COLUMNS = ["pilot_id", "molecule_id", "time_s", "px", "py", "pz", "absorber"]


class LogFormatError(ValueError):
    pass


def write_log_csv(log: AbsorptionLog, path) -> None:
    """Event CSV preceded by '#'-prefixed JSON header lines (scene, pose, counts)."""
    header = {
        "scene": log.scene.to_dict(),
        "pose_A": {"position": log.pose_A.position.tolist(),
                   "orientation": log.pose_A.orientation.tolist()},
        "n_lost": [p.n_lost for p in log.pilots],
    }
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for p in log.pilots:
            for t, pt, a, m in zip(p.times, p.points, p.absorber, p.molecule_ids):
                w.writerow([p.pilot_id, int(m), repr(float(t)), repr(float(pt[0])),
                            repr(float(pt[1])), repr(float(pt[2])), ABSORBER_NAMES[int(a)]])


def read_log_csv(path) -> tuple[dict | None, list[PilotResult]]:
    """Parse an event CSV. The JSON header is optional; pilots without events are empty.

    Raises LogFormatError naming the offending line number.
    """
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    header = None
    start = 0
    if lines and lines[0].startswith("#"):
        try:
            header = json.loads(lines[0][1:])
        except json.JSONDecodeError as e:
            raise LogFormatError(f"line 1: bad JSON header ({e})") from None
        start = 1
    reader = csv.reader(io.StringIO("\n".join(lines[start:])))
    cols = next(reader, None)
    if cols != LOG_COLUMNS:
        raise LogFormatError(f"line {start + 1}: expected columns {LOG_COLUMNS}, got {cols}")
    rows = {k: [] for k in range(N_TUBES)}
    names = {v: k for k, v in ABSORBER_NAMES.items()}
    for lineno, row in enumerate(reader, start=start + 2):
        try:
            if len(row) != len(LOG_COLUMNS):
                raise ValueError(f"expected {len(LOG_COLUMNS)} fields, got {len(row)}")
            pid, mid = int(row[0]), int(row[1])
            vals = [float(v) for v in row[2:6]]
            if not 0 <= pid < N_TUBES:
                raise ValueError(f"pilot_id {pid} out of range")
            if row[6] not in names:
                raise ValueError(f"unknown absorber {row[6]!r}")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("non-finite value")
        except ValueError as e:
            raise LogFormatError(f"line {lineno}: {e}") from None
        rows[pid].append((vals[0], mid, vals[1:], names[row[6]]))
    n_lost = header.get("n_lost", [0] * N_TUBES) if header else [0] * N_TUBES
    pilots = []
    for pid in range(N_TUBES):
        evs = sorted(rows[pid], key=lambda e: (e[0], e[1]))
        pilots.append(PilotResult(
            pid,
            np.array([e[0] for e in evs], dtype=float),
            np.array([e[2] for e in evs], dtype=float).reshape(-1, 3),
            np.array([e[3] for e in evs], dtype=np.int8),
            np.array([e[1] for e in evs], dtype=np.int64),
            int(n_lost[pid])))
    return header, pilots
