"""Euclidean curves: curvature invariants, the invariant Euler-Lagrange
equation of the elastica-type Lagrangian v^2/2, and the unit circle rebuilt
from constant curvature."""
import argparse

import numpy as np

from orbita.cli import cmd_el, cmd_invariants
from orbita.problem import Workspace
from orbita.reconstruct import ReducedSolution, reconstruct
from orbita.symcore import sym


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--step", type=float, default=1e-3)
    args = p.parse_args()

    ws = Workspace.bundled("se2", seed=args.seed)
    _, lines = cmd_invariants(ws, args)
    print("\n".join(lines))

    args.lagrangian = "v^2/2"
    _, lines = cmd_el(ws, args)
    print("\n".join(lines))

    unit = ReducedSolution.from_expressions(["t"], {"y": "1", "v": "0"})
    rec = reconstruct(ws.chart, unit, {sym("x"): 0, sym("u"): 0, sym("u[1]"): 0}, [1.0], [0.8], step=args.step)
    x, u = rec.points().T
    print(f"constant curvature 1: {len(x)} points, max |x^2 + (u-1)^2 - 1| = "
          f"{np.max(np.abs(x**2 + (u - 1) ** 2 - 1)):.2e}, estimated error {rec.error_estimate:.1e}")


if __name__ == "__main__":
    main()
