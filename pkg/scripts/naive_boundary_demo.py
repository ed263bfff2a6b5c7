"""Show that a plain three-point stencil of the second-order operator needs an
arbitrary first row, while the block (first-order) form does not."""

import numpy as np

from susylangevin import determinant as det
from susylangevin.model import TimeGrid


def main():
    grid = TimeGrid(0.02, 200)
    t = grid.times[1:]
    fp = 1.0 + 0.5 * np.sin(t)
    gamma = 1.0
    print("block form, a=1/2:", det.logdet(det.build_block_kramers(np.full(grid.M, gamma), fp, 0.5, grid)).value)
    for row in [(1.0, 0.0), (1.0 + grid.epsilon * gamma, 0.0), (2.0, 0.0), (0.5, 0.0)]:
        ld = det.naive_second_order_logdet(gamma, fp, grid, row).value
        print(f"naive stencil, first row {row}: {ld:.6f}")


if __name__ == "__main__":
    main()
