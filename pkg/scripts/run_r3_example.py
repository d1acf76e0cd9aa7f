"""Translations of R^3 acting on surfaces: syzygies of the second-order
invariants, conservation laws, the commutation check and a paraboloid
rebuilt from a constant Hessian."""
import argparse

import numpy as np

from orbita.cli import cmd_conslaws, cmd_syzygies
from orbita.problem import Workspace
from orbita.reconstruct import reconstruct
from orbita.reduction import CommutationFailure, check_commutation
from orbita.symcore import sym


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()

    ws = Workspace.bundled("r3", seed=args.seed)
    for cmd in (cmd_syzygies, cmd_conslaws):
        print("\n".join(cmd(ws, args)[1]))

    for r in (2, 3):
        try:
            report = check_commutation(ws.chart, r, r_o=ws.r_o, seed=args.seed)
            print(f"order {r}: reduction commutes with prolongation (levels {[lv['order'] for lv in report.levels]})")
        except CommutationFailure as exc:
            print(f"order {r}: {exc}")

    sol, initial, start, lengths, step = ws.problem.reduced_solution()
    rec = reconstruct(ws.chart, sol, initial, start, lengths, step=step)
    x1, x2 = rec.grid
    dev = np.max(np.abs(rec.jets[sym("u")] - (x1**2 + x2**2) / 2))
    print(f"constant Hessian: {x1.size} grid points, max deviation from (x1^2 + x2^2)/2 = {dev:.2e}")


if __name__ == "__main__":
    main()
