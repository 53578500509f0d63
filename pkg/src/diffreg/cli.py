"""Command line interface: ``diffreg register | diag | synth``.

Exit codes: 0 converged, 1 input or validation error, 2 iteration limit
reached, 3 line search failure.
"""
import argparse
from dataclasses import asdict
import json
import os
import sys

import numpy as np

from .diag import PROTOCOLS, run_protocol
from .fieldio import read_config, write_field
from .inverse import Model, NewtonConfig, newton_solve
from .precond import PrecondChoice
from .problems import RegistrationProblem, load_image, make_smooth_problem, write_pgm
from .spectral import Grid
from .transport import SchemeConfig

EXIT = {"converged": 0, "maxit": 2, "linesearch": 3}
MODELS = {"comp": "compressible", "incomp": "incompressible", "nearincomp": "nearincompressible"}

DEFAULTS = {
    "grid": "128", "norm": "h2", "betav": "1e-2", "model": "comp", "betaw": None,
    "scheme": "sl", "cfl": "5", "pc": "2l-cheb", "cheb_iters": "10", "tol_rel": "1e-2",
    "tol_abs": "1e-5", "maxit": "50", "out": "out", "seed": "0", "sigma": "1",
    "krylov_tol": "1e-6", "precs": "reg,2l-pcg,2l-cheb",
}


def _add_common(p):
    p.add_argument("--config", help="flat key=value file; command line flags take precedence")
    p.add_argument("--grid", help="grid size n (n x n) or n1xn2")
    p.add_argument("--norm", choices=["h1", "h2", "h3"])
    p.add_argument("--betav", type=float)
    p.add_argument("--model", choices=sorted(MODELS))
    p.add_argument("--betaw", type=float)
    p.add_argument("--scheme", choices=["rk2", "rk2a", "sl"])
    p.add_argument("--cfl", type=float)
    p.add_argument("--pc", choices=["reg", "2l-pcg", "2l-cheb"])
    p.add_argument("--cheb-iters", dest="cheb_iters", type=int)
    p.add_argument("--tol-rel", dest="tol_rel", type=float)
    p.add_argument("--tol-abs", dest="tol_abs", type=float)
    p.add_argument("--maxit", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)


def parser():
    ap = argparse.ArgumentParser(prog="diffreg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    reg = sub.add_parser("register", help="register a template image to a reference image")
    reg.add_argument("--reference", help="reference image (PGM or field file)")
    reg.add_argument("--template", help="template image (PGM or field file)")
    reg.add_argument("--problem", choices=["smooth-a", "smooth-b"],
                     help="use a built-in test problem instead of image files")
    reg.add_argument("--sigma", type=float, help="Gaussian smoothing width in grid cells")
    _add_common(reg)
    dg = sub.add_parser("diag", help="run a diagnostic protocol")
    dg.add_argument("protocol")
    dg.add_argument("--variant", default="A", choices=["A", "B"])
    dg.add_argument("--krylov-tol", dest="krylov_tol", type=float,
                    help="PCG tolerance for kkt-bench (default 1e-6)")
    dg.add_argument("--precs", help="comma separated preconditioners for kkt-bench")
    _add_common(dg)
    sy = sub.add_parser("synth", help="write a synthetic problem as field files")
    sy.add_argument("problem", choices=["smooth-a", "smooth-b"])
    _add_common(sy)
    return ap


def resolve(args):
    """Merge defaults, config file and flags into one flat settings dict."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key, val in vars(args).items():
        if val is not None and key not in ("config", "command"):
            cfg[key] = val
    return cfg


def _grid(text):
    text = str(text).lower()
    n = [int(x) for x in text.split("x")] if "x" in text else [int(text)] * 2
    return Grid(tuple(n))


def _model(cfg):
    bw = cfg.get("betaw")
    return Model(str(cfg["norm"]).lower(), float(cfg["betav"]), MODELS[cfg["model"]],
                 float(bw) if bw not in (None, "", "None") else None)


def _scheme(cfg):
    return SchemeConfig(cfg["scheme"], float(cfg["cfl"]))


def _register(args, cfg):
    grid = _grid(cfg["grid"])
    if cfg.get("problem"):
        prob = make_smooth_problem(cfg["problem"][-1].upper(), grid)
    else:
        if not (cfg.get("reference") and cfg.get("template")):
            raise ValueError("register needs --reference and --template, or --problem")
        sigma = float(cfg["sigma"])
        prob = RegistrationProblem(load_image(cfg["reference"], grid, sigma),
                                   load_image(cfg["template"], grid, sigma), "file")
    model = _model(cfg)
    newton = NewtonConfig(max_iter=int(cfg["maxit"]), tol_rel=float(cfg["tol_rel"]),
                          tol_abs=float(cfg["tol_abs"]))
    pc = PrecondChoice(cfg["pc"], cheb_iters=int(cfg["cheb_iters"]), seed=int(cfg["seed"]))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    def log(rec):
        print(f"iter {rec['iter']:3d}  J {rec['objective']:.6e}  |g|rel {rec['grad_rel']:.3e}"
              f"  krylov {rec['krylov_iters']}", file=sys.stderr)

    v, rep = newton_solve(prob, model, _scheme(cfg), newton, pc, log=log)
    residual = rep.m1 - prob.m_r
    write_field(os.path.join(out, "m1.vrf"), rep.m1)
    write_field(os.path.join(out, "residual.vrf"), residual)
    write_field(os.path.join(out, "velocity.vrf"), v)
    write_field(os.path.join(out, "jacobian.vrf"), rep.jacobian)
    write_pgm(os.path.join(out, "m1.pgm"), rep.m1)
    with open(os.path.join(out, "convergence.csv"), "w") as f:
        cols = list(rep.iterations[0])
        f.write(",".join(cols) + "\n")
        for r in rep.iterations:
            f.write(",".join(str(r.get(c, "")) for c in cols) + "\n")
    summary = rep.summary()
    summary["jacobian_nonpositive"] = bool(rep.jac_min <= 0)
    summary["jacobian_max_deviation"] = float(np.abs(rep.jacobian - 1).max())
    summary["config"] = cfg | {"model_resolved": asdict(model), "newton": asdict(newton),
                               "precond": asdict(pc), "scheme_resolved": asdict(_scheme(cfg))}
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, default=lambda x: x.item() if hasattr(x, "item") else str(x))
    print(f"{rep.status}: {rep.outer_iterations} iterations, relative residual "
          f"{rep.rel_residual:.3e}, jacobian det in [{rep.jac_min:.3f}, {rep.jac_max:.3f}]")
    return EXIT[rep.status]


def _diag(args, cfg):
    if args.protocol not in PROTOCOLS:
        print(f"unknown protocol {args.protocol!r}; available: {', '.join(PROTOCOLS)}",
              file=sys.stderr)
        return 1
    n = _grid(cfg["grid"] if args.grid else 64).n[0]
    rep = run_protocol(args.protocol, n=n, variant=args.variant, scheme=_scheme(cfg),
                       model=_model(cfg), seed=int(cfg["seed"]),
                       cheb_iters=int(cfg["cheb_iters"]), tol=float(cfg["krylov_tol"]),
                       precond_kinds=tuple(p.strip() for p in str(cfg["precs"]).split(",")))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    rep.to_csv(os.path.join(out, f"{args.protocol}.csv"))
    rep.to_json(os.path.join(out, f"{args.protocol}.json"))
    print(rep.table())
    return 0


def _synth(args, cfg):
    grid = _grid(cfg["grid"])
    prob = make_smooth_problem(args.problem[-1].upper(), grid)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_field(os.path.join(out, "reference.vrf"), prob.m_r)
    write_field(os.path.join(out, "template.vrf"), prob.m_t)
    write_field(os.path.join(out, "velocity.vrf"), prob.v_true)
    print(f"wrote reference.vrf, template.vrf, velocity.vrf to {out}")
    return 0


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        cfg = resolve(args)
        if args.command == "register":
            return _register(args, cfg)
        if args.command == "diag":
            return _diag(args, cfg)
        return _synth(args, cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
