"""Monte Carlo check of P(T_i > T_j) = h_j / (h_i + h_j) under proportional hazards.

The identity needs a continuous baseline; step baselines put mass on ties and
are left out.

    python scripts/win_probability_check.py --pairs 200000
"""

import argparse

from ecindex.simulate import ExponentialBaseline, WeibullBaseline, monte_carlo_win_probability

BASELINES = {
    "exponential(1)": ExponentialBaseline(1.0),
    "weibull(2, 1)": WeibullBaseline(2.0, 1.0),
    "weibull(0.7, 3)": WeibullBaseline(0.7, 3.0),
}
HAZARD_PAIRS = [(1, 3), (2, 5), (1, 1), (0.2, 7)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'baseline':<18} {'h_i':>5} {'h_j':>5} {'formula':>8} {'estimate':>9} {'error':>8}")
    seed = args.seed
    for name, base in BASELINES.items():
        for hi, hj in HAZARD_PAIRS:
            seed += 1
            est = monte_carlo_win_probability(base, hi, hj, args.pairs, seed=seed)
            p = hj / (hi + hj)
            print(f"{name:<18} {hi:>5g} {hj:>5g} {p:>8.4f} {est:>9.4f} {est - p:>+8.4f}")


if __name__ == "__main__":
    main()
