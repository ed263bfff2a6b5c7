"""Print the a = 1/2 log-determinant against (1/2) sum eps F' on an eps ladder."""

import argparse

from susylangevin.acceptance import stratonovich_ladder


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--T", type=float, default=4.0)
    p.add_argument("--eps", type=float, nargs="+", default=[0.04, 0.02, 0.01, 0.005])
    args = p.parse_args()
    rows = stratonovich_ladder(args.eps, args.T)
    print(f"{'eps':>8} {'M':>6} {'logdet':>14} {'reference':>14} {'error':>12} {'ratio':>7}")
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"{prev / r['error']:7.3f}"
        print(f"{r['epsilon']:8.4f} {r['M']:6d} {r['logdet']:14.8f} {r['reference']:14.8f} {r['error']:12.4e} {ratio}")
        prev = r["error"]


if __name__ == "__main__":
    main()
