"""Numerical diagnostics: convergence studies, adjoint and derivative checks,
Krylov benchmarks. Each protocol returns an :class:`ErrorReport`."""
import csv
from dataclasses import dataclass, field
import io
import itertools
import json
import time

import numpy as np
import scipy.fft as sfft

from .inverse import Model, ReducedSpace, pcg
from .precond import CoarseOperator, PrecondChoice, build_preconditioner, estimate_eigs
from .problems import blob_image, make_smooth_problem, make_synthetic_pair, smooth_image, smooth_velocity
from .spectral import Grid, band_limited_noise, inner, norm, resample
from .transport import SchemeConfig, Transport, TransportBlowUp

UNSTABLE = "***"


@dataclass
class ErrorReport:
    protocol: str
    rows: list
    meta: dict = field(default_factory=dict)

    def columns(self):
        cols = []
        for r in self.rows:
            cols += [k for k in r if k not in cols]
        return cols

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns(), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
        if path:
            with open(path, "w") as f:
                f.write(buf.getvalue())
        return buf.getvalue()

    def to_json(self, path=None):
        text = json.dumps({"protocol": self.protocol, "rows": self.rows, "meta": self.meta},
                          indent=2, default=_jsonable)
        if path:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def table(self):
        cols = self.columns()
        cells = [[_fmt(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells]
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return UNSTABLE
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return str(v)


def fourier_error(coarse, fine):
    """Relative l2 error of the spectrally prolonged coarse field."""
    up = resample(coarse, fine.shape[-2:])
    e = sfft.fft2(up - fine)
    return float(np.linalg.norm(e) / np.linalg.norm(sfft.fft2(fine)))


def _check_grids(grids):
    grids = [int(n) for n in grids]
    if len(grids) < 2:
        raise ValueError("need at least two grids")
    for a, b in zip(grids, grids[1:]):
        if b != 2 * a:
            raise ValueError(f"grids must double at each level, got {grids}")
    return grids


def self_convergence(variant="A", scheme=SchemeConfig("rk2a", 0.2), grids=(64, 128, 256),
                     equation="state"):
    """Errors between solutions on successive grids.

    The state equation carries the reference image forward with the test
    velocity; the adjoint equation carries the same image backward from the
    final time. Time steps follow the CFL number on each grid. An entry is
    ``None`` (written as ``***``) when a solve trips the blow-up guard.
    """
    if equation not in ("state", "adjoint"):
        raise ValueError("equation must be 'state' or 'adjoint'")
    grids = _check_grids(grids)
    sols, nts = [], []
    for n in grids:
        g = Grid((n, n))
        tr = Transport(smooth_velocity(g, variant), scheme)
        m = smooth_image(g, variant)
        nts.append(tr.nt)
        try:
            sols.append(tr.state(m)[-1] if equation == "state" else tr.adjoint(m)[0])
        except TransportBlowUp:
            sols.append(None)
    rows = []
    for i in range(len(grids) - 1):
        err = None
        if sols[i] is not None and sols[i + 1] is not None:
            err = fourier_error(sols[i], sols[i + 1])
        rows.append({"n": grids[i], "n_fine": grids[i + 1], "nt": nts[i],
                     "nt_fine": nts[i + 1], "error": err})
    return ErrorReport("self-convergence", rows,
                       {"variant": variant, "scheme": scheme.scheme, "cfl": scheme.cfl,
                        "equation": equation})


def adjoint_error(v, m0, scheme=SchemeConfig("sl"), nt=None):
    """Relative defect ``|<Cm, Cm> - <C'Cm, m>| / <Cm, Cm>`` of the adjoint solve."""
    tr = Transport(v, scheme, nt)
    a = tr.state(m0)[-1]
    lam0 = tr.adjoint(a)[0]
    aa = inner(a, a)
    return abs(aa - inner(lam0, m0)) / abs(aa)


def adjoint_error_table(variant="A", n=64, cases=None):
    """Adjoint defect for a list of ``(scheme, cfl or None, nt or None)`` cases."""
    g = Grid((n, n))
    prob = make_smooth_problem(variant, g)
    v = smooth_velocity(g, variant)
    if cases is None:
        cases = [("rk2", 0.2, None), ("rk2a", 0.2, None)] + [("sl", None, k) for k in (3, 5, 11, 21, 102)]
    rows = []
    for scheme, cfl, nt in cases:
        cfg = SchemeConfig(scheme, cfl if cfl else 1.0, nt)
        try:
            err = adjoint_error(v, prob.m_t, cfg)
        except TransportBlowUp:
            err = None
        rows.append({"scheme": scheme, "cfl": cfl if cfl else "", "nt": cfg.steps(v),
                     "adjoint_error": err})
    return ErrorReport("adjoint-error", rows, {"variant": variant, "n": n})


def gradient_check(space, v, direction, eps=1e-4):
    """Compare ``<g, d>`` with a central difference of the objective.

    The step count is frozen at the value for ``v`` so that both objective
    evaluations use the same discretization.
    """
    gr = space.gradient(v)
    nt = gr.evaluation.transport.nt
    fp = space.evaluate(v + eps * direction, nt).total
    fm = space.evaluate(v - eps * direction, nt).total
    fd = (fp - fm) / (2 * eps)
    an = inner(gr.g, direction)
    return {"nt": nt, "fd": fd, "analytic": an, "rel_error": abs(fd - an) / abs(fd)}


def hessian_symmetry_check(space, v, n_probes=10, seed=0, mode="GN"):
    """Relative defect ``|<Hu, w> - <u, Hw>| / |<Hu, w>|`` for random probes."""
    rng = np.random.default_rng(seed)
    H = space.hessian(space.gradient(v), mode)
    rows = []
    for k in range(n_probes):
        u = space.project(band_limited_noise(space.grid, rng, 2))
        w = space.project(band_limited_noise(space.grid, rng, 2))
        a, b = inner(H(u), w), inner(u, H(w))
        rows.append({"probe": k, "uHw": a, "wHu": b, "defect": abs(a - b) / abs(a)})
    return ErrorReport("hessian-symmetry", rows,
                       {"scheme": space.scheme.scheme, "cfl": space.scheme.cfl, "mode": mode})


def kkt_benchmark(space, v, choices, tol=1e-6, rhs="gradient", maxiter=500):
    """Solve one Newton system with several preconditioners.

    ``rhs="gradient"`` solves ``H dv = -g(v)``; ``rhs="true-solution"`` uses
    ``H dv* = b`` with ``dv* = -v / 2`` and reports the error against it.
    Pairwise relative differences between solutions go into ``meta``.
    """
    gr = space.gradient(v)
    H = space.hessian(gr)
    if rhs == "gradient":
        b, truth = -gr.g, None
    elif rhs == "true-solution":
        truth = -0.5 * v
        b = H(truth)
    else:
        raise ValueError("rhs must be 'gradient' or 'true-solution'")
    rows, sols = [], {}
    for choice in choices:
        t0 = time.perf_counter()
        pc = build_preconditioner(space, choice)
        kr = pcg(H, b, pc(v, gr, tol), tol=tol, maxiter=maxiter)
        label = choice.kind if choice.kind != "2l-cheb" else f"2l-cheb({choice.cheb_iters})"
        if choice.kind == "2l-pcg":
            label = f"2l-pcg({choice.eps:g})"
        sols[label] = kr.x
        row = {"precond": label, "iterations": kr.iterations, "converged": kr.converged,
               "rel_residual": kr.rel_residual, "time": time.perf_counter() - t0}
        if truth is not None:
            row["error"] = norm(kr.x - truth) / norm(truth)
        rows.append(row)
    agree = {f"{a} vs {b}": norm(sols[a] - sols[b]) / norm(sols[b])
             for a, b in itertools.combinations(sols, 2)}
    for row in rows:
        mine = [d for pair, d in agree.items() if row["precond"] in pair.split(" vs ")]
        row["agreement"] = max(mine) if mine else None
    return ErrorReport("kkt-bench", rows, {"tol": tol, "rhs": rhs, "agreement": agree,
                                           "beta_v": space.model.beta_v, "n": space.grid.n})


def eigenvalue_scaling(problem, norm_name="h2", betas=(1e-1, 1e-2, 1e-3), steps=30):
    """Estimated top eigenvalue of the coarse split operator at zero velocity."""
    rows = []
    for beta in betas:
        space = ReducedSpace(problem, Model(norm_name, beta), SchemeConfig("sl", 5.0))
        _, emax = estimate_eigs(CoarseOperator(space, space.zeros()), steps)
        rows.append({"beta_v": beta, "emax": emax, "scaled": (emax - 1) * beta})
    return ErrorReport("eigs", rows, {"norm": norm_name, "steps": steps})


def stability(variant="B", n=256, cases=(("rk2", 0.2), ("rk2a", 0.2), ("sl", 0.2))):
    """Whether each scheme completes the state and adjoint solves without blowing up."""
    g = Grid((n, n))
    prob = make_smooth_problem(variant, g)
    v = smooth_velocity(g, variant)
    rows = []
    for scheme, cfl in cases:
        tr = Transport(v, SchemeConfig(scheme, cfl))
        row = {"scheme": scheme, "cfl": cfl, "nt": tr.nt}
        try:
            m1 = tr.state(prob.m_t)[-1]
            tr.adjoint(prob.m_r - m1)
            row.update(stable=True, max_abs=float(np.abs(m1).max()))
        except TransportBlowUp:
            row.update(stable=False, max_abs=None)
        rows.append(row)
    return ErrorReport("stability", rows, {"variant": variant, "n": n})


def synthetic_blob_problem(n, n_blobs=24, seed=0):
    """Blob image carried by the smooth test velocity."""
    g = Grid((n, n))
    return make_synthetic_pair(smooth_velocity(g, "A"), blob_image(g, n_blobs, seed))


PROTOCOLS = ("adjoint-error", "self-convergence", "gradient-check", "hessian-symmetry",
             "kkt-bench", "eigs", "stability")


def run_protocol(name, n=64, variant="A", scheme=SchemeConfig("sl", 0.2), model=Model(),
                 seed=0, precond_kinds=("reg", "2l-pcg", "2l-cheb"), cheb_iters=10, tol=1e-6):
    """Dispatch used by the command line interface."""
    if name not in PROTOCOLS:
        raise KeyError(name)
    g = Grid((n, n))
    if name == "adjoint-error":
        return adjoint_error_table(variant, n)
    if name == "self-convergence":
        grids = [n, 2 * n, 4 * n]
        reps = [self_convergence(variant, scheme, grids, eq) for eq in ("state", "adjoint")]
        rows = [dict(r, equation=rep.meta["equation"]) for rep in reps for r in rep.rows]
        return ErrorReport(name, rows, reps[0].meta | {"equation": "both"})
    if name == "stability":
        return stability(variant, n)
    prob = make_smooth_problem(variant, g)
    space = ReducedSpace(prob, model, scheme)
    rng = np.random.default_rng(seed)
    if name == "gradient-check":
        v = space.project(0.5 * prob.v_true)
        d = space.project(band_limited_noise(g, rng, 2))
        return ErrorReport(name, [gradient_check(space, v, d)],
                           {"scheme": scheme.scheme, "cfl": scheme.cfl, "norm": model.norm,
                            "deformation": model.deformation})
    if name == "hessian-symmetry":
        return hessian_symmetry_check(space, space.project(0.5 * prob.v_true), 10, seed)
    if name == "eigs":
        return eigenvalue_scaling(prob, model.norm)
    choices = [PrecondChoice(k, cheb_iters=cheb_iters) for k in precond_kinds]
    return kkt_benchmark(space, space.project(prob.v_true), choices, tol)


