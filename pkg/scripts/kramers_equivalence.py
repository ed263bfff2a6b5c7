"""Stationary <x^2> of the Kramers process from the coupled system at several
sigma splits and from the direct second-order recurrence."""

import argparse

from susylangevin import simulate as sm
from susylangevin.model import TimeGrid, kramers, linear_force, reduce_to_first_order


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--K", type=int, default=5000)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()
    spec = kramers(1.0, linear_force(1.0))
    grid = TimeGrid(args.eps, args.M)
    print("target 1/(2 gamma k) = 0.5")
    for k, s in enumerate((0.0, 0.25, 0.5)):
        ens = sm.run_ensemble(reduce_to_first_order(spec, [s]), grid, args.a, args.K, args.seed + k, burn_in=20.0)
        e = sm.stationary_second_moment(ens)
        print(f"coupled sigma={s:4.2f}: {e.value:.4f} +- {e.stderr:.4f}")
    e = sm.stationary_second_moment(sm.simulate_direct(spec, grid, args.a, args.K, args.seed + 10, burn_in=20.0))
    print(f"direct            : {e.value:.4f} +- {e.stderr:.4f}")


if __name__ == "__main__":
    main()
