#!/usr/bin/env python3
"""Grid self-convergence of the state and adjoint solves."""
import argparse

from diffreg.diag import self_convergence
from diffreg.transport import SchemeConfig

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--grids", type=int, nargs="+", default=[64, 128, 256])
ap.add_argument("--variant", default="A", choices=["A", "B"])
ap.add_argument("--cfl", type=float, default=0.2)
args = ap.parse_args()

for scheme in ("rk2", "rk2a", "sl"):
    for eq in ("state", "adjoint"):
        rep = self_convergence(args.variant, SchemeConfig(scheme, args.cfl), args.grids, eq)
        print(f"\n{scheme} {eq}")
        print(rep.table())
