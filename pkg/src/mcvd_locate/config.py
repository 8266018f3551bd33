"""Scene configuration: every physical and simulation knob in one place."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .geometry import NodeLayout


class ConfigError(ValueError):
    """Raised with every violated constraint, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SceneConfig:
    r: float = 5.0  # receiver radius, um
    D: float = 100.0  # diffusion coefficient, um^2/s
    N: int = 2000  # molecules per pilot
    delta: float = 0.5  # tube tip offset beyond the surface, um
    dt: float = 1e-4  # s
    T_pilot: float = 5.0  # per-pilot window (guard time), s
    bin_width: float = 0.01  # s
    cull_radius: float = 1000.0  # um, measured from the midpoint of the two nodes
    d_min: float = 20.0  # um
    d_max: float = 50.0  # um
    seed: int = 20240601

    @property
    def layout(self) -> NodeLayout:
        return NodeLayout(self.r, self.delta)

    @property
    def sigma(self) -> float:
        """Per-axis standard deviation of one Brownian step."""
        return math.sqrt(2.0 * self.D * self.dt)

    @property
    def n_steps(self) -> int:
        return int(round(self.T_pilot / self.dt))

    @property
    def n_bins(self) -> int:
        return int(math.ceil(self.T_pilot / self.bin_width - 1e-9))

    def problems(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                out.append(f"{f.name} must be finite")
        if not self.r > 0:
            out.append("r > 0")
        if not self.D > 0:
            out.append("D > 0")
        if not (isinstance(self.N, int) and self.N >= 1):
            out.append("N >= 1")
        if not self.delta > 0:
            out.append("delta > 0")
        if not self.dt > 0:
            out.append("dt > 0")
        if not self.T_pilot >= 100 * self.dt:
            out.append("T_pilot >= 100*dt")
        if not self.bin_width >= self.dt:
            out.append("bin_width >= dt")
        if not self.d_min > 2 * self.r + self.delta:
            out.append("d_min must exceed 2r+delta")
        if not self.d_max > self.d_min:
            out.append("d_max must exceed d_min")
        if not self.cull_radius > 2 * self.d_max:
            out.append("cull_radius must exceed 2*d_max")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            out.append("seed must be a 64-bit unsigned integer")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                if f.type in ("int", int):
                    if isinstance(v, float) and v.is_integer():
                        v = int(v)
                    if not isinstance(v, int) or isinstance(v, bool):
                        raise ConfigError([f"{f.name} must be an integer"])
                else:
                    if isinstance(v, bool) or not isinstance(v, (int, float)):
                        raise ConfigError([f"{f.name} must be a number"])
                    v = float(v)
                kw[f.name] = v
        return cls(**kw)

    def replace(self, **kw) -> "SceneConfig":
        return replace(self, **kw)


def validate_config(cfg: SceneConfig) -> SceneConfig:
    """Return `cfg` unchanged if valid, else raise ConfigError listing all problems."""
    problems = cfg.problems()
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> SceneConfig:
    with open(path) as fh:
        return validate_config(SceneConfig.from_dict(json.load(fh)))


def save_config(cfg: SceneConfig, path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")
