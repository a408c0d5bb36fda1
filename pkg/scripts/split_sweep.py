"""Standard deviation of the expected C-Index across D^ret fractions.

A small retrospective set gives a noisy Cox fit; a small prospective set gives
a noisy bound. The sd curve should dip somewhere in between.

    python scripts/split_sweep.py --sim configs/simulate_sweep.json --replicates 30
"""

import argparse

from ecindex.cli import load_simulation_config, render_sweep
from ecindex.evalharness import StudyConfig, split_sweep, sweep_argmin
from ecindex.simulate import generate_cohort


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sim", default="configs/simulate_sweep.json")
    ap.add_argument("--fractions", default="0.2,0.3,0.4,0.5,0.6,0.7,0.8")
    ap.add_argument("--replicates", type=int, default=30)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cohort = generate_cohort(load_simulation_config(args.sim)).cohort
    fractions = [float(f) for f in args.fractions.split(",")]
    sweep = split_sweep(cohort, fractions, replicates=args.replicates, seed=args.seed,
                        study=StudyConfig(threads=args.threads))
    _, md = render_sweep(sweep)
    print(md)
    print(f"argmin: {sweep_argmin(sweep):g}")


if __name__ == "__main__":
    main()
