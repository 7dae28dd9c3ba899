"""L1 error of the density solver against the Barenblatt source solution (chi = 0, n = 1)."""

import argparse

from kelsim.validation import barenblatt_errors, fitted_order


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[128, 256, 512])
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--L", type=float, default=3.0)
    ap.add_argument("--m", type=float, default=2.0)
    args = ap.parse_args()
    errs, drifts = barenblatt_errors(args.N, args.T, args.L, args.m)
    print("N,l1_error,mass_drift")
    for N, e, d in zip(args.N, errs, drifts):
        print(f"{N},{e:.6e},{d:.3e}")
    if len(args.N) > 1:
        print(f"fitted order {fitted_order(args.N, errs):.3f}")


if __name__ == "__main__":
    main()
