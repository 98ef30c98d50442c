"""Monte Carlo size and power of the permutation covariance test.

    python scripts/cov_calibration.py --trials 500 --seed 500
"""

import argparse
import time

import numpy as np

from statetrace.evaluation import cov_two_sample_test
from statetrace.numerics import derive_seed, make_rng


def rejection_rate(trials, n, k, scale, seed, permutations, method):
    rejected = 0
    for i in range(trials):
        rng = make_rng(seed, i)
        a, b = rng.standard_normal((n, k)), scale * rng.standard_normal((n, k))
        res = cov_two_sample_test(a, b, method=method, n_permutations=permutations, seed=derive_seed(seed, i))
        rejected += res.p_value < 0.05
    return rejected / trials


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--trials", type=int, default=500)
    parser.add_argument("--seed", type=int, default=500)
    parser.add_argument("--permutations", type=int, default=1000)
    parser.add_argument("--method", choices=["permutation", "asymptotic"], default="permutation")
    args = parser.parse_args()

    t0 = time.perf_counter()
    size = rejection_rate(args.trials, 100, 5, 1.0, args.seed, args.permutations, args.method)
    power = rejection_rate(args.trials, 200, 5, 2.0, args.seed + 1, args.permutations, args.method)
    print(f"{args.method}: type-I rate {size:.3f}, power (I vs 4I, n=200) {power:.3f}, {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
