"""Per-pilot feature tokens built from Node B's absorption events.

Token layout (30 reals), frozen as part of the "mcvd-locate/v1" format:

    index        meaning
    3*k + 0      octant k peak arrival time (s), -1 if octant k is empty
    3*k + 1      octant k peak-bin count
    3*k + 2      octant k total count                  (k = 0..7)
    24           pilot total (all octants)
    25           distance from the global peak time (um), -1 if no events
    26           distance from the pilot total (um), -1 if no events
    27, 28, 29   unit centroid direction of the hits (zeros if no events)

The flattened model input appends two channels per token, giving 32 per
token and 192 overall in pilot order:

    30           is_top2: 1.0 for the two strongest pilots
    31           rank: 0 for the strongest pilot ... 5 for the weakest
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import invert_distance_from_count, invert_distance_from_peak
from .config import SceneConfig
from .geometry import N_OCTANTS, N_TUBES, octant_indices
from .simulator import NODE_B, PilotResult

TOKEN_DIM = 30
TOKEN_DIM_FLAT = 32
FLAT_DIM = N_TUBES * TOKEN_DIM_FLAT
SENTINEL = -1.0

IDX_PILOT_TOTAL = 24
IDX_D_TIME = 25
IDX_D_COUNT = 26
IDX_CENTROID = slice(27, 30)
IDX_IS_TOP2 = 30
IDX_RANK = 31


def token_names() -> list[str]:
    names = []
    for k in range(N_OCTANTS):
        names += [f"oct{k}_peak_time", f"oct{k}_peak_count", f"oct{k}_total"]
    names += ["pilot_total", "d_hat_time", "d_hat_count", "centroid_x", "centroid_y", "centroid_z"]
    return names


def flat_names() -> list[str]:
    base = token_names() + ["is_top2", "rank"]
    return [f"p{p}_{n}" for p in range(N_TUBES) for n in base]


def _peak(times: np.ndarray, cfg: SceneConfig) -> tuple[float, int]:
    """(center of the fullest bin, its count); earliest bin wins ties."""
    if len(times) == 0:
        return SENTINEL, 0
    bins = np.minimum((np.asarray(times) / cfg.bin_width).astype(np.int64), cfg.n_bins - 1)
    counts = np.bincount(bins, minlength=cfg.n_bins)
    k = int(np.argmax(counts))
    return (k + 0.5) * cfg.bin_width, int(counts[k])


def extract_octant_features(times, points, cfg: SceneConfig,
                            b_center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """(8, 3) array of (peak_time, peak_count, total_count) per octant."""
    times = np.asarray(times, dtype=float).reshape(-1)
    out = np.zeros((N_OCTANTS, 3))
    out[:, 0] = SENTINEL
    if len(times) == 0:
        return out
    octs = octant_indices(np.asarray(points, dtype=float).reshape(-1, 3) - np.asarray(b_center))
    for k in range(N_OCTANTS):
        sel = times[octs == k]
        if len(sel):
            t, c = _peak(sel, cfg)
            out[k] = (t, c, len(sel))
    return out


def build_token(pilot: PilotResult, cfg: SceneConfig, b_center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """30-real token for one pilot from its Node-B events."""
    b = pilot.at(NODE_B)
    tok = np.zeros(TOKEN_DIM)
    tok[:24] = extract_octant_features(b.times, b.points, cfg, b_center).reshape(-1)
    total = b.n_events
    tok[IDX_PILOT_TOTAL] = total
    if total == 0:
        tok[IDX_D_TIME] = SENTINEL
        tok[IDX_D_COUNT] = SENTINEL
        return tok
    t_peak, _ = _peak(b.times, cfg)
    tok[IDX_D_TIME] = invert_distance_from_peak(t_peak, cfg.r, cfg.D)
    tok[IDX_D_COUNT] = invert_distance_from_count(min(total, cfg.N), cfg.N, cfg.r)
    rel = b.points - np.asarray(b_center)
    mean = (rel / np.linalg.norm(rel, axis=1, keepdims=True)).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm > 0:
        tok[IDX_CENTROID] = mean / norm
    return tok


def select_top2(totals) -> tuple[int, int]:
    """Indices of the two largest totals; lower index wins ties."""
    order = ranking(totals)
    return int(order[0]), int(order[1])


def ranking(totals) -> np.ndarray:
    totals = np.asarray(totals, dtype=float)
    return np.lexsort((np.arange(len(totals)), -totals))


@dataclass(frozen=True)
class FeatureMatrix:
    tokens: np.ndarray  # (6, 30)
    top2: tuple

    @classmethod
    def from_tokens(cls, tokens) -> "FeatureMatrix":
        tokens = np.asarray(tokens, dtype=float).reshape(N_TUBES, TOKEN_DIM)
        return cls(tokens, select_top2(tokens[:, IDX_PILOT_TOTAL]))

    def flatten(self) -> np.ndarray:
        order = ranking(self.tokens[:, IDX_PILOT_TOTAL])
        rank = np.empty(N_TUBES)
        rank[order] = np.arange(N_TUBES)
        flat = np.zeros((N_TUBES, TOKEN_DIM_FLAT))
        flat[:, :TOKEN_DIM] = self.tokens
        flat[list(self.top2), IDX_IS_TOP2] = 1.0
        flat[:, IDX_RANK] = rank
        return flat.reshape(-1)


def unflatten(vec) -> FeatureMatrix:
    flat = np.asarray(vec, dtype=float).reshape(N_TUBES, TOKEN_DIM_FLAT)
    return FeatureMatrix.from_tokens(flat[:, :TOKEN_DIM])


def build_features(pilots, cfg: SceneConfig) -> FeatureMatrix:
    """Feature matrix for a log's six pilots (Node B at the origin)."""
    return FeatureMatrix.from_tokens([build_token(p, cfg) for p in pilots])
