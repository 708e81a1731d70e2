"""Influence gap of the three sharing patterns for a range of group counts.

    python scripts/gap_table.py --lmin 5 --lmax 10
"""
import argparse

from vitas_kit.mapping import build_bilateral, build_cyclic, build_ordinal, enumerate_optimal, influence_gap


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lmin", type=int, default=5)
    ap.add_argument("--lmax", type=int, default=10)
    args = ap.parse_args()
    print(f"{'l':>3} {'ordinal':>10} {'bilateral':>10} {'cyclic':>10} {'optimum':>10} {'cyc/ord':>8}")
    for l in range(args.lmin, args.lmax + 1):
        o, b, c = (influence_gap(f(l)) for f in (build_ordinal, build_bilateral, build_cyclic))
        opt = f"{influence_gap(enumerate_optimal(l)):10.4f}" if l <= 6 else f"{'-':>10}"
        print(f"{l:>3} {o:10.4f} {b:10.4f} {c:10.4f} {opt} {c / o:8.4f}")


if __name__ == "__main__":
    main()
