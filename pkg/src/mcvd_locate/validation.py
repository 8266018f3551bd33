"""Single-sphere Monte Carlo checked against the closed-form hitting-time law."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from .channel import hit_cdf, peak_time
from .config import SceneConfig
from .simulator import simulate_single_sphere

CHECK_DISTANCE = 20.0
CHECK_HORIZON = 50.0
CHECK_MOLECULES = 100_000
QUICK_MOLECULES = 10_000
MODE_TOLERANCE_BINS = 2
N_GOF_BINS = 50
GOF_ALPHA = 0.01


@dataclass(frozen=True)
class ChannelCheck:
    n_molecules: int
    n_absorbed: int
    fraction: float
    expected_fraction: float
    std_error: float
    z: float
    sigmas: float
    mode_time: float
    peak_time: float
    mode_offset_bins: int
    chi2: float
    chi2_p: float
    seconds: float

    @property
    def fraction_ok(self) -> bool:
        return abs(self.z) <= self.sigmas

    @property
    def mode_ok(self) -> bool:
        return abs(self.mode_offset_bins) <= MODE_TOLERANCE_BINS

    @property
    def fit_ok(self) -> bool:
        return self.chi2_p > GOF_ALPHA

    @property
    def passed(self) -> bool:
        return self.fraction_ok and self.mode_ok and self.fit_ok

    def to_dict(self) -> dict:
        return asdict(self) | {"fraction_ok": self.fraction_ok, "mode_ok": self.mode_ok,
                               "fit_ok": self.fit_ok, "passed": self.passed}

    def lines(self) -> list[str]:
        ok = {True: "PASS", False: "FAIL"}
        return [
            f"[{ok[self.fraction_ok]}] absorbed fraction {self.fraction:.5f} vs {self.expected_fraction:.5f} "
            f"(z = {self.z:+.2f}, limit {self.sigmas:g} sigma, N = {self.n_molecules})",
            f"[{ok[self.mode_ok]}] histogram mode {self.mode_time:.3f} s vs peak {self.peak_time:.3f} s "
            f"({self.mode_offset_bins:+d} bins, limit {MODE_TOLERANCE_BINS})",
            f"[{ok[self.fit_ok]}] chi-square {self.chi2:.1f} on {N_GOF_BINS - 1} dof, p = {self.chi2_p:.3g}",
        ]


def histogram_mode(times, bin_width: float, horizon: float) -> tuple[int, float]:
    """Index and centre of the fullest fixed-width bin (earliest wins ties)."""
    n_bins = int(math.ceil(horizon / bin_width - 1e-9))
    counts = np.bincount(np.minimum((np.asarray(times) / bin_width).astype(np.int64), n_bins - 1),
                         minlength=n_bins)
    k = int(np.argmax(counts))
    return k, (k + 0.5) * bin_width


def equal_probability_edges(r, d, D, horizon, n_bins=N_GOF_BINS) -> np.ndarray:
    """Bin edges on (0, horizon] with equal mass under the conditional hitting-time law."""
    total = hit_cdf(r, d, D, horizon)
    inner = [brentq(lambda t, q=q: hit_cdf(r, d, D, t) / total - q, 1e-9, horizon, xtol=1e-14)
             for q in np.arange(1, n_bins) / n_bins]
    return np.array([0.0] + inner + [horizon])


def run_channel_check(cfg: SceneConfig, n_molecules: int = CHECK_MOLECULES, sigmas: float = 3.0,
                      seed: int | None = None, d: float = CHECK_DISTANCE,
                      horizon: float = CHECK_HORIZON) -> ChannelCheck:
    seed = cfg.seed if seed is None else seed
    t0 = time.perf_counter()
    res = simulate_single_sphere(cfg.r, d, cfg.D, cfg.dt, horizon, n_molecules, seed,
                                 cull_radius=cfg.cull_radius)
    seconds = time.perf_counter() - t0
    p = hit_cdf(cfg.r, d, cfg.D, horizon)
    se = math.sqrt(p * (1 - p) / n_molecules)
    n_abs = res.n_events
    tp = peak_time(cfg.r, d, cfg.D)
    k, mode_t = histogram_mode(res.times, cfg.bin_width, horizon)
    counts, _ = np.histogram(res.times, bins=equal_probability_edges(cfg.r, d, cfg.D, horizon))
    expected = n_abs / N_GOF_BINS
    chi2 = float(np.sum((counts - expected) ** 2 / expected)) if n_abs else math.inf
    return ChannelCheck(n_molecules, n_abs, n_abs / n_molecules, p, se, (n_abs / n_molecules - p) / se,
                        sigmas, mode_t, tp, k - int(tp // cfg.bin_width), chi2,
                        float(stats.chi2.sf(chi2, N_GOF_BINS - 1)), seconds)
