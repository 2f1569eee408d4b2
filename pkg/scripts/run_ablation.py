"""Loss ablation ladder (CE, CE+T-MSE, CE+T-MSE+transition) over several seeds.

Prints one row per (arm, seed) and the per-arm means of the grammar-invalid
adjacent-pair count and edit score on raw final-stage predictions.

    python scripts/run_ablation.py --seeds 0 1 2 3 4 --epochs 50
"""

import argparse
import logging

from subtasknet.experiments import LADDER, SetupConfig, ablation, ladder_means
from subtasknet.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    setup = SetupConfig(noise=args.noise, channels=args.channels)
    train_cfg = TrainConfig(max_epochs=args.epochs, warmup_epochs=min(5, args.epochs))
    rows = ablation(setup, train_cfg, args.seeds)
    print(f"{'arm':<16}{'seed':>5}{'invalid':>9}{'edit':>8}{'f1@50':>8}{'acc':>8}")
    for arm, seed, inv, ed, f1, acc in rows:
        print(f"{arm:<16}{seed:>5}{inv:>9.3f}{ed:>8.2f}{f1:>8.2f}{acc:>8.2f}")
    means = ladder_means(rows)
    for arm, _, _ in LADDER:
        inv, ed = means[arm]
        print(f"mean arm={arm} invalid={inv:.4f} edit={ed:.4f}")


if __name__ == "__main__":
    main()
