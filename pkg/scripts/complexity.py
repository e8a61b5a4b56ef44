"""Sweep grid sizes and compare factorized with joint space-time attention.

    python scripts/complexity.py --out complexity.tsv [--c 64] [--timed]
"""

import argparse

from vlrefine.bench import bench_wallclock, count_attention_macs, predicted_core_macs, write_report_tsv

SIZES = (1, 2, 8, 20, 32)
STEPS = (1, 2, 6, 32, 64)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", type=int, default=64)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--timed", action="store_true", help="also time each grid (slow for large N_f*T)")
    ap.add_argument("--out", default="complexity.tsv")
    args = ap.parse_args()

    print(f"{'N_f':>4} {'T':>4} {'factorized':>14} {'joint':>16} {'ratio':>8}  match")
    reports = []
    for n_f in SIZES:
        for t in STEPS:
            fac = count_attention_macs("factorized", n_f, t, args.c, args.heads)["core"]
            joint = count_attention_macs("joint", n_f, t, args.c, args.heads)["core"]
            ok = fac == predicted_core_macs("factorized", n_f, t, args.c) and joint == predicted_core_macs("joint", n_f, t, args.c)
            print(f"{n_f:>4} {t:>4} {fac:>14,} {joint:>16,} {joint / fac:>8.3f}  {'yes' if ok else 'NO'}")
            if args.timed:
                reports.append(bench_wallclock(n_f, t, args.c, args.heads))
    if not args.timed:
        reports.append(bench_wallclock(32, 32, args.c, args.heads))
    write_report_tsv(args.out, reports)
    last = reports[-1]
    print(f"wall clock at {last.n_f}x{last.t}x{last.c}: factorized {last.wall_factorized_ms:.1f} ms, joint {last.wall_joint_ms:.1f} ms")


if __name__ == "__main__":
    main()
