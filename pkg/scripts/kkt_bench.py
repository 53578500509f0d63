#!/usr/bin/env python3
"""Krylov iterations of one Newton system under each preconditioner."""
import argparse

from diffreg.diag import kkt_benchmark, synthetic_blob_problem
from diffreg.inverse import Model, ReducedSpace
from diffreg.precond import PrecondChoice
from diffreg.transport import SchemeConfig

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--n", type=int, default=128)
ap.add_argument("--norm", default="h2", choices=["h1", "h2", "h3"])
ap.add_argument("--betas", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3])
ap.add_argument("--tol", type=float, default=1e-6)
ap.add_argument("--cheb-iters", type=int, nargs="+", default=[5, 10])
args = ap.parse_args()

prob = synthetic_blob_problem(args.n)
choices = [PrecondChoice("reg"), PrecondChoice("2l-pcg", eps=0.1)]
choices += [PrecondChoice("2l-cheb", cheb_iters=k) for k in args.cheb_iters]
for beta in args.betas:
    space = ReducedSpace(prob, Model(args.norm, beta), SchemeConfig("rk2a", 0.2))
    rep = kkt_benchmark(space, prob.v_true, choices, args.tol)
    print(f"\nbeta_v = {beta:g}")
    print(rep.table())
