"""Preconditioners for the reduced-space Hessian.

``reg``
    Inverse of the regularization operator, ``(beta_v A)^{-1}``.
``2l-pcg`` / ``2l-cheb``
    Two-level scheme in the split-preconditioned coordinates
    ``s = (beta_v A)^{1/2} v``, where the Hessian reads
    ``I + (beta_v A)^{-1/2} Q (beta_v A)^{-1/2}``. The low band of the
    residual is restricted to the half-resolution grid and the coarse
    Gauss-Newton system is solved there, by PCG to a relative tolerance or
    by a fixed number of Chebyshev iterations; the high band is passed
    through, since the data term barely acts on it.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .inverse import ReducedSpace, pcg
from .spectral import (apply_inv_reg, band_limited_noise, cutoff_filter, prolong,
                       restrict)
from .transport import SchemeConfig

KINDS = ("reg", "2l-pcg", "2l-cheb")


@dataclass(frozen=True)
class PrecondChoice:
    """Preconditioner selection.

    ``eps`` scales the outer Krylov tolerance to give the coarse PCG
    tolerance. ``eigs`` fixes the Chebyshev interval instead of estimating
    it. With ``eig_update="once"`` the interval is estimated at zero velocity
    and kept; ``"iterate"`` re-estimates it for every velocity iterate, since
    the top eigenvalue drifts as the images deform and an interval that is
    too short makes the Chebyshev polynomial indefinite. ``margin`` widens
    the estimated upper bound because Lanczos approaches it from below.
    """

    kind: str = "reg"
    cheb_iters: int = 10
    eps: float = 0.1
    coarse_cfl: float = 5.0
    eigs: tuple = None
    margin: float = 1.1
    lanczos_steps: int = 30
    seed: int = 0
    eig_update: str = "iterate"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preconditioner {self.kind!r}; choose from {KINDS}")
        if self.cheb_iters < 0:
            raise ValueError("cheb_iters must be nonnegative")
        if self.eig_update not in ("once", "iterate"):
            raise ValueError("eig_update must be 'once' or 'iterate'")


def chebyshev_solve(op, rhs, k, emin, emax):
    """``k`` Chebyshev iterations for ``op x = rhs`` from ``x = 0``.

    The spectrum of ``op`` is assumed to lie in ``[emin, emax]``. Exactly
    ``k`` operator applications are made, so the result is a fixed
    polynomial in ``op`` applied to ``rhs``.
    """
    x = np.zeros_like(rhs)
    if k == 0:
        return x
    if not 0 < emin <= emax:
        raise ValueError(f"need 0 < emin <= emax, got {emin}, {emax}")
    theta = 0.5 * (emax + emin)
    delta = 0.5 * (emax - emin)
    r = rhs.copy()
    d = r / theta
    if delta <= 1e-14 * theta:
        for _ in range(k):
            x = x + d
            r = r - op(d)
            d = r / theta
        return x
    sigma = theta / delta
    rho = 1.0 / sigma
    for _ in range(k):
        x = x + d
        r = r - op(d)
        rho_new = 1.0 / (2 * sigma - rho)
        d = rho_new * rho * d + (2 * rho_new / delta) * r
        rho = rho_new
    return x


def lanczos(op, v0, steps):
    """Lanczos with full reorthogonalization; returns the Ritz values."""
    q = v0 / np.linalg.norm(v0)
    basis = [q]
    alphas, betas = [], []
    for j in range(steps):
        w = op(basis[-1])
        a = float(np.vdot(basis[-1], w))
        alphas.append(a)
        for b in basis:
            w = w - np.vdot(b, w) * b
        beta = float(np.linalg.norm(w))
        if not np.isfinite(beta) or beta < 1e-12 * max(1.0, abs(a)) or j == steps - 1:
            break
        betas.append(beta)
        basis.append(w / beta)
    if len(alphas) == 1:
        return np.array(alphas)
    return eigh_tridiagonal(np.array(alphas), np.array(betas[: len(alphas) - 1]),
                            eigvals_only=True)


def power_iteration(op, v0, steps):
    q = v0 / np.linalg.norm(v0)
    lam = 0.0
    for _ in range(steps):
        w = op(q)
        lam = float(np.vdot(q, w))
        q = w / np.linalg.norm(w)
    return lam


class CoarseOperator:
    """Split-preconditioned Gauss-Newton Hessian on the half-resolution grid."""

    def __init__(self, space, v, cfl=5.0):
        grid = space.grid.coarse()
        self.grid = grid
        problem = space.problem.restricted(grid)
        self.space = ReducedSpace(problem, space.model, SchemeConfig("sl", cfl),
                                  space.derivatives)
        vc = self.space.project(restrict(v))
        self.hessian = self.space.hessian(self.space.gradient(vc), "GN")
        self.weights = self.space.weights
        self.beta = space.model.beta_v

    def half(self, s):
        return apply_inv_reg(s, self.weights, self.beta, -0.5)

    def __call__(self, s):
        return s + self.half(self.hessian.data_term(self.half(s)))


def estimate_eigs(coarse, steps=30, seed=0):
    """Spectral bounds ``(1, emax)`` of a split-preconditioned operator."""
    rng = np.random.default_rng(seed)
    s0 = coarse.space.project(band_limited_noise(coarse.grid, rng, 2))
    emax = np.nan
    try:
        ritz = lanczos(coarse, s0, steps)
        emax = float(np.max(ritz))
    except (FloatingPointError, np.linalg.LinAlgError, ValueError):
        pass
    if not np.isfinite(emax):
        emax = power_iteration(coarse, s0, 2 * steps)
    return 1.0, max(emax, 1.0)


def rescale_emax(emax, beta, beta_new):
    """Upper bound for another ``beta_v``; the data term scales like ``1/beta_v``."""
    return 1.0 + (emax - 1.0) * beta / beta_new


class RegPreconditioner:
    eigs = None

    def __init__(self, space):
        self.space = space

    def apply(self, r):
        sp = self.space
        return sp.project(apply_inv_reg(r, sp.weights, sp.model.beta_v))

    def __call__(self, v=None, gr=None, tol=None):
        return self.apply


class TwoLevelPreconditioner:
    """Two-level preconditioner rebuilt for each velocity iterate."""

    def __init__(self, space, choice):
        self.space = space
        self.choice = choice
        self.eigs = choice.eigs
        self.fallbacks = 0
        self.estimated = choice.kind == "2l-cheb" and choice.eigs is None
        if self.estimated:
            self.eigs = estimate_eigs(CoarseOperator(space, space.zeros(), choice.coarse_cfl),
                                      choice.lanczos_steps, choice.seed)

    def __call__(self, v, gr=None, tol=1e-6):
        coarse = CoarseOperator(self.space, v, self.choice.coarse_cfl)
        if self.estimated and self.choice.eig_update == "iterate" and np.any(v):
            self.eigs = estimate_eigs(coarse, self.choice.lanczos_steps, self.choice.seed)
        return lambda r: self.apply(r, coarse, tol)

    def coarse_solve(self, coarse, rc, tol):
        ch = self.choice
        if ch.kind == "2l-cheb":
            emin, emax = self.eigs
            return chebyshev_solve(coarse, rc, ch.cheb_iters, emin, 1 + ch.margin * (emax - 1))
        return pcg(coarse, rc, None, tol=ch.eps * tol, maxiter=500).x

    def apply(self, r, coarse, tol):
        sp = self.space
        beta = sp.model.beta_v
        z = apply_inv_reg(r, sp.weights, beta, -0.5)
        low = cutoff_filter(z, "low")
        sc = self.coarse_solve(coarse, restrict(low), tol)
        if not np.all(np.isfinite(sc)):
            self.fallbacks += 1
            return sp.project(apply_inv_reg(r, sp.weights, beta))
        out = cutoff_filter(prolong(sc), "low") + (z - low)
        return sp.project(apply_inv_reg(out, sp.weights, beta, -0.5))


def build_preconditioner(space, choice):
    if choice.kind == "reg":
        return RegPreconditioner(space)
    if any(k < 8 for k in space.grid.n):
        raise ValueError("two-level preconditioning needs at least 8 points per axis")
    return TwoLevelPreconditioner(space, choice)


