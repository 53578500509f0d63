"""Reduced-space objective, gradient, Hessian action and Newton-Krylov solver.

The unknown is a stationary velocity ``v``. The objective is::

    J(v) = 1/2 ||m(1) - m_r||^2 + beta_v / 2 <A v, v>  [+ beta_w / 2 ||div v||_H1^2]

where ``m`` is the template transported by ``v``. Gradients are L2 Riesz
representatives with respect to :func:`diffreg.spectral.inner`.

Two routes produce derivatives. ``"discrete"`` (the default) differentiates
the discrete state map exactly, so gradients match finite differences of
:meth:`ReducedSpace.evaluate` and the Gauss-Newton Hessian is symmetric.
``"continuous"`` discretizes the continuous adjoint and incremental
equations with the chosen scheme.
"""
from dataclasses import asdict, dataclass, field
import time

import numpy as np

from .counters import tally
from .spectral import (SpectralWeights, apply_inv_reg, apply_reg, divergence, gradient,
                       inner, norm, project_div_free)
from .transport import SchemeConfig, Transport, TransportBlowUp

DEFORMATIONS = ("compressible", "incompressible", "nearincompressible")
DERIVATIVES = ("discrete", "continuous")


@dataclass(frozen=True)
class Model:
    """Regularization norm, weights and deformation model."""

    norm: str = "h2"
    beta_v: float = 1e-2
    deformation: str = "compressible"
    beta_w: float = None

    def __post_init__(self):
        if self.norm not in ("h1", "h2", "h3"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if not self.beta_v > 0:
            raise ValueError("beta_v must be positive")
        if self.deformation not in DEFORMATIONS:
            raise ValueError(f"unknown deformation model {self.deformation!r}")
        if self.deformation == "nearincompressible" and not (self.beta_w and self.beta_w > 0):
            raise ValueError("the near-incompressible model needs beta_w > 0")


@dataclass
class Evaluation:
    total: float
    mismatch: float
    regularization: float
    penalty: float
    state: np.ndarray
    transport: Transport


@dataclass
class GradientResult:
    g: np.ndarray
    body_force: np.ndarray
    evaluation: Evaluation
    adjoint: np.ndarray
    linearization: object = None

    @property
    def objective(self):
        return self.evaluation.total


def maxnorm(v):
    return float(np.max(np.abs(v)))


class ReducedSpace:
    """Objective and derivatives of one registration problem.

    Parameters
    ----------
    problem : RegistrationProblem
    model : Model
    scheme : SchemeConfig
        Transport scheme for objective and gradient.
    derivatives : {"discrete", "continuous"}
    hessian_scheme : SchemeConfig, optional
        Scheme for Hessian actions; defaults to ``scheme``.
    """

    def __init__(self, problem, model, scheme=SchemeConfig(), derivatives="discrete",
                 hessian_scheme=None):
        if derivatives not in DERIVATIVES:
            raise ValueError(f"derivatives must be one of {DERIVATIVES}")
        self.problem = problem
        self.model = model
        self.scheme = scheme
        self.hessian_scheme = hessian_scheme or scheme
        self.derivatives = derivatives
        self.grid = problem.grid
        self.weights = SpectralWeights.build(self.grid, model.norm)

    def zeros(self):
        return np.zeros((2,) + self.grid.n)

    def project(self, v):
        if self.model.deformation == "incompressible":
            return project_div_free(v)
        return v

    def _penalty_op(self, v):
        # derivative of 1/2 ||div v||_H1^2: -grad (I - lap) div v with the
        # same discrete operators as the objective
        w = divergence(v)
        return -gradient(w - divergence(gradient(w)))

    def reg_gradient(self, v):
        g = apply_reg(v, self.weights, self.model.beta_v)
        if self.model.deformation == "nearincompressible":
            g = g + self.model.beta_w * self._penalty_op(v)
        return g

    def transport(self, v, nt=None, scheme=None):
        return Transport(v, scheme or self.scheme, nt)

    def evaluate(self, v, nt=None):
        tr = self.transport(v, nt)
        m = tr.state(self.problem.m_t)
        mismatch = 0.5 * norm(m[-1] - self.problem.m_r) ** 2
        reg = 0.5 * inner(apply_reg(v, self.weights, self.model.beta_v), v)
        pen = 0.0
        if self.model.deformation == "nearincompressible":
            w = divergence(v)
            pen = 0.5 * self.model.beta_w * (norm(gradient(w)) ** 2 + norm(w) ** 2)
        return Evaluation(mismatch + reg + pen, mismatch, reg, pen, m, tr)

    def gradient(self, v, nt=None, evaluation=None):
        ev = evaluation if evaluation is not None else self.evaluate(v, nt)
        tr, m = ev.transport, ev.state
        lam1 = self.problem.m_r - m[-1]
        lin = None
        if self.derivatives == "discrete":
            lin = tr.linearize(m)
            lam, b = lin.cotangent(lam1)
        else:
            lam = tr.adjoint(lam1)
            b = tr.body_force(lam, m)
        g = self.reg_gradient(v) + self.project(b)
        return GradientResult(g, b, ev, lam, lin)

    def hessian(self, gr, mode="GN"):
        return HessianOperator(self, gr, mode)


class HessianOperator:
    """Action of the Gauss-Newton (``"GN"``) or full Newton (``"FN"``) Hessian."""

    def __init__(self, space, gr, mode="GN"):
        if mode not in ("GN", "FN"):
            raise ValueError("mode must be 'GN' or 'FN'")
        self.space = space
        self.mode = mode
        ev = gr.evaluation
        if space.hessian_scheme == space.scheme:
            self.tr, self.m, self.lam, self.lin = ev.transport, ev.state, gr.adjoint, gr.linearization
        else:
            v = ev.transport.v
            self.tr = Transport(v, space.hessian_scheme)
            self.m = self.tr.state(space.problem.m_t)
            self.lam, self.lin = None, None
        if space.derivatives == "discrete" and self.lin is None:
            self.lin = self.tr.linearize(self.m)
        if mode == "FN" and self.lam is None:
            self.lam = self.tr.adjoint(space.problem.m_r - self.m[-1])

    def data_term(self, vt):
        """Hessian action minus the ``beta_v A`` part."""
        sp, tr = self.space, self.tr
        if sp.derivatives == "discrete":
            mt = self.lin.tangent(vt)
            _, b = self.lin.cotangent(-mt[-1])
        else:
            mt = tr.inc_state(vt, self.m)
            b = tr.body_force(tr.inc_adjoint(-mt[-1]), self.m)
        if self.mode == "FN":
            coupling = tr.inc_adjoint(np.zeros(sp.grid.n), vt, self.lam)
            b = b + tr.body_force(coupling, self.m) + tr.body_force(self.lam, mt)
        out = sp.project(b)
        if sp.model.deformation == "nearincompressible":
            out = out + sp.model.beta_w * sp._penalty_op(vt)
        return out

    def __call__(self, vt):
        return apply_reg(vt, self.space.weights, self.space.model.beta_v) + self.data_term(vt)


def evaluate_objective(problem, model, v, scheme=SchemeConfig(), nt=None):
    return ReducedSpace(problem, model, scheme).evaluate(v, nt)


def evaluate_gradient(problem, model, v, scheme=SchemeConfig(), nt=None, derivatives="discrete"):
    return ReducedSpace(problem, model, scheme, derivatives).gradient(v, nt)


def hessian_matvec(problem, model, v, vt, scheme=SchemeConfig(), mode="GN",
                   derivatives="discrete", nt=None):
    sp = ReducedSpace(problem, model, scheme, derivatives)
    return sp.hessian(sp.gradient(v, nt), mode)(vt)


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    rel_residual: float
    negative_curvature: bool = False
    history: list = field(default_factory=list)


def _dot(a, b):
    return float(np.vdot(a, b))


def pcg(matvec, b, precond=None, tol=1e-6, maxiter=500, x0=None):
    """Preconditioned conjugate gradients.

    The residual is measured in the preconditioned norm ``sqrt(r . P r)``
    relative to its initial value. The Polak-Ribiere form of the update keeps
    the method stable for slightly varying preconditioners (such as an inner
    iterative solve). A direction of nonpositive curvature stops the
    iteration and the last iterate is returned.
    """
    precond = precond or (lambda r: r)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x) if x0 is not None else b.copy()
    z = precond(r)
    rz = _dot(r, z)
    if not rz > 0:
        if np.any(r):
            return KrylovResult(x, 0, False, np.nan, negative_curvature=True)
        return KrylovResult(x, 0, True, 0.0)
    rz0 = rz
    p = z.copy()
    hist = [1.0]
    for it in range(1, maxiter + 1):
        Ap = matvec(p)
        pAp = _dot(p, Ap)
        if not pAp > 0:
            return KrylovResult(x, it - 1, False, hist[-1], True, hist)
        alpha = rz / pAp
        x = x + alpha * p
        r_new = r - alpha * Ap
        z_new = precond(r_new)
        rz_new = _dot(r_new, z_new)
        if not rz_new > 0:
            # exact solve or an indefinite preconditioner
            done = not np.any(r_new)
            return KrylovResult(x, it, done, 0.0 if done else np.nan, False, hist)
        rel = np.sqrt(rz_new / rz0)
        hist.append(rel)
        if not np.isfinite(rel):
            return KrylovResult(x, it, False, rel, False, hist)
        if rel <= tol:
            return KrylovResult(x, it, True, rel, False, hist)
        beta = max(_dot(r_new, z_new - z), 0.0) / rz
        p = z_new + beta * p
        r, z, rz = r_new, z_new, rz_new
    return KrylovResult(x, maxiter, False, hist[-1], False, hist)


@dataclass(frozen=True)
class NewtonConfig:
    max_iter: int = 50
    tol_rel: float = 1e-2
    tol_abs: float = 1e-5
    max_krylov: int = 500
    eta_max: float = 0.5
    forcing: float = None
    c1: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 20
    hessian: str = "GN"
    derivatives: str = "discrete"
    verbose: bool = False


@dataclass
class SolverReport:
    status: str
    iterations: list
    v: np.ndarray = None
    rel_residual: float = None
    grad_rel: float = None
    jac_min: float = None
    jac_max: float = None
    wall_time: float = 0.0
    counts: dict = field(default_factory=dict)
    eigs: tuple = None

    @property
    def converged(self):
        return self.status == "converged"

    @property
    def outer_iterations(self):
        return len(self.iterations) - 1

    @property
    def krylov_iterations(self):
        return sum(r["krylov_iters"] for r in self.iterations)

    def summary(self):
        d = {k: v for k, v in asdict(self).items() if k not in ("v", "iterations")}
        d["outer_iterations"] = self.outer_iterations
        d["krylov_iterations"] = self.krylov_iterations
        d["objective"] = self.iterations[-1]["objective"]
        return d


def newton_solve(problem, model, scheme=SchemeConfig(), config=NewtonConfig(), precond=None,
                 v0=None, log=None):
    """Inexact Gauss-Newton-Krylov solve with an Armijo line search.

    Returns the velocity and a :class:`SolverReport` whose ``status`` is
    ``"converged"``, ``"maxit"`` or ``"linesearch"``.
    """
    from .precond import PrecondChoice, build_preconditioner

    precond = precond or PrecondChoice()
    t0 = time.perf_counter()
    space = ReducedSpace(problem, model, scheme, config.derivatives)
    v = space.zeros() if v0 is None else space.project(np.array(v0, dtype=float))
    pc = build_preconditioner(space, precond)
    records = []
    status = "maxit"
    with tally() as counts:
        gr = space.gradient(v)
        g0 = maxnorm(gr.g)
        stats = {}
        for k in range(config.max_iter + 1):
            gn = maxnorm(gr.g)
            rel = gn / g0 if g0 > 0 else 0.0
            ev = gr.evaluation
            rec = {"iter": k, "objective": ev.total, "mismatch": ev.mismatch,
                   "regularization": ev.regularization + ev.penalty, "grad_inf": gn,
                   "grad_rel": rel, "nt": ev.transport.nt, "krylov_iters": 0,
                   "krylov_rel_res": np.nan, "step": np.nan, "backtracks": 0,
                   "fallback": False, "direction_div": np.nan, "time": time.perf_counter() - t0}
            rec.update(stats)
            records.append(rec)
            if log:
                log(rec)
            if gn <= config.tol_abs or rel <= config.tol_rel:
                status = "converged"
                break
            if k == config.max_iter:
                break
            eta = config.forcing if config.forcing is not None else min(config.eta_max, np.sqrt(rel))
            H = space.hessian(gr, config.hessian)
            P = pc(v, gr, eta)
            kr = pcg(H, -gr.g, P, tol=eta, maxiter=config.max_krylov)
            d = space.project(kr.x)
            slope = inner(gr.g, d)
            fallback = not slope < 0
            if fallback:
                d = -space.project(apply_inv_reg(gr.g, space.weights, model.beta_v))
                slope = inner(gr.g, d)
            alpha, accepted, trial = 1.0, False, None
            for nb in range(config.max_backtracks + 1):
                vn = v + alpha * d
                try:
                    trial = space.evaluate(vn)
                except TransportBlowUp:
                    trial = None
                if trial is not None and trial.total <= ev.total + config.c1 * alpha * slope:
                    accepted = True
                    break
                alpha *= config.shrink
            stats = {"krylov_iters": kr.iterations, "krylov_rel_res": kr.rel_residual,
                     "step": alpha, "backtracks": nb, "fallback": fallback,
                     "direction_div": maxnorm(divergence(d)) / max(maxnorm(d), 1e-300)}
            if not accepted:
                status = "linesearch"
                records[-1].update(stats)
                break
            v = vn
            gr = space.gradient(v, evaluation=trial)
        m1 = gr.evaluation.state[-1]
        J = gr.evaluation.transport.jacobian_det()
    r0 = norm(problem.m_t - problem.m_r)
    report = SolverReport(
        status, records, v,
        rel_residual=norm(m1 - problem.m_r) / r0 if r0 > 0 else 0.0,
        grad_rel=records[-1]["grad_rel"], jac_min=float(J.min()), jac_max=float(J.max()),
        wall_time=time.perf_counter() - t0, counts=dict(counts), eigs=getattr(pc, "eigs", None))
    report.m1 = m1
    report.jacobian = J
    return v, report
