#!/usr/bin/env python3
"""Adjoint defect of each transport scheme on the smooth test problem."""
import argparse

from diffreg.diag import adjoint_error_table

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--n", type=int, default=64)
ap.add_argument("--variant", default="A", choices=["A", "B"])
ap.add_argument("--csv", help="also write the table to this file")
args = ap.parse_args()

rep = adjoint_error_table(args.variant, args.n)
print(rep.table())
if args.csv:
    rep.to_csv(args.csv)
