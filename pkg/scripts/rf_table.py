"""Receptive field of the Fibonacci and exponential schedules for L = 1..N.

    python scripts/rf_table.py --max-layers 16 --kernel 3
"""

import argparse

from subtasknet.tcn import make_schedule, receptive_field


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-layers", type=int, default=16)
    ap.add_argument("--kernel", type=int, default=3)
    args = ap.parse_args()
    print(f"{'L':>3}{'fibonacci':>12}{'exponential':>14}")
    for L in range(1, args.max_layers + 1):
        fib = receptive_field(make_schedule("fibonacci", L), args.kernel)
        exp = receptive_field(make_schedule("exponential", L), args.kernel)
        print(f"{L:>3}{fib:>12}{exp:>14}")


if __name__ == "__main__":
    main()
