"""Simulator vs closed form over several distances and time steps.

    python scripts/validate_channel.py [--n 40000] [--horizon 5]

Prints, for each (d, dt), the absorbed fraction and its z-score against the
analytic hitting probability, plus the histogram mode against the peak time.
The CLI's validate-channel runs the single default case.
"""

import argparse

from mcvd_locate.config import SceneConfig
from mcvd_locate.validation import run_channel_check


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=40_000)
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    print(f"{'d':>6} {'dt':>8} {'fraction':>9} {'expected':>9} {'z':>6} {'mode':>6} {'peak':>6} {'chi2 p':>8} {'s':>5}")
    for d in (12.0, 20.0, 35.0):
        for dt in (4e-4, 1e-4, 2.5e-5):
            cfg = SceneConfig(dt=dt)
            c = run_channel_check(cfg, args.n, seed=args.seed, d=d, horizon=args.horizon)
            print(f"{d:6.1f} {dt:8.1e} {c.fraction:9.5f} {c.expected_fraction:9.5f} {c.z:+6.2f} "
                  f"{c.mode_time:6.3f} {c.peak_time:6.3f} {c.chi2_p:8.3g} {c.seconds:5.1f}")


if __name__ == "__main__":
    main()
