"""Regime-switching analog: detect with the rest preset, then test adjacent segments.

    python scripts/rest_validation.py --seed 0
"""

import argparse
import json
import logging
from pathlib import Path

from statetrace.experiments import run_rest_validation
from statetrace.forecaster import TrainConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--permutations", type=int, default=1000)
    parser.add_argument("--out", type=Path)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = TrainConfig(learning_rate=3e-3, epochs=args.epochs, seed=args.seed)
    r = run_rest_validation(master_seed=args.seed, train_cfg=cfg, n_permutations=args.permutations)
    for row in r.per_subject:
        print(f"{row['subject_id']}: truth {row['truth']} detected {row['detected']} rejected {row['rejected']}/{row['pairs']}")
    print(f"rejection rate {r.rejection_rate:.3f} ({r.n_rejected}/{r.n_pairs}), {r.seconds:.1f}s")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "rest_validation.json").write_text(
            json.dumps({"rejection_rate": r.rejection_rate, "subjects": r.per_subject}, indent=1)
        )


if __name__ == "__main__":
    main()
