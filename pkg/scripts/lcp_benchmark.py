"""Iteration counts and oracle agreement of the LCP solvers on seeded random SPD problems."""
import argparse

from cdyn.cli import lcp_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--tol", type=float, default=1e-10)
    args = ap.parse_args()

    rows = lcp_benchmark(args.n, args.count, args.seed, args.tol)
    print(f"{'solver':<10} {'max|dp|':>10} {'residual':>10} {'iterations':>11} {'seconds':>8}")
    for name, r in rows.items():
        print(f"{name:<10} {r['max_dp']:>10.2e} {r['max_residual']:>10.2e} "
              f"{r['iterations']:>11d} {r['seconds']:>8.3f}")


if __name__ == "__main__":
    main()
