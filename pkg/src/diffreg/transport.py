"""Forward, adjoint and incremental transport solvers.

Three schemes are available:

``rk2``
    Heun's method on the advective form ``dm/dt = -v . grad m`` with
    pseudospectral derivatives; the adjoint uses the continuity form.
``rk2a``
    Heun's method on the antisymmetric (skew) form. Because the discrete
    advection operator is skew with respect to the discrete inner product, the
    adjoint step is the exact transpose of the forward step.
``sl``
    Semi-Lagrangian: values are interpolated at departure points traced with
    a second order characteristic scheme, and source terms are integrated with
    Heun's method along the characteristic.

Trajectories are arrays of shape ``(nt + 1, n1, n2)`` indexed by time node.
Adjoint trajectories are indexed by forward time as well, so ``lam[nt]`` is
the final condition.

Besides the solvers for the continuous incremental equations, each
:class:`Transport` offers a :meth:`Transport.linearize` object that
differentiates the discrete state map exactly. Its transpose gives gradients
and Gauss-Newton Hessians that are consistent with the discrete objective.
"""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .interp import Interpolator
from .spectral import Grid, divergence, gradient

SCHEMES = ("rk2", "rk2a", "sl")
BLOWUP_FACTOR = 1e3


class TransportBlowUp(RuntimeError):
    """Raised when a solution exceeds the growth guard."""


@dataclass(frozen=True)
class SchemeConfig:
    """Time integrator choice.

    ``nt`` fixes the number of time steps; otherwise it is derived from
    ``cfl`` and the velocity at hand.
    """

    scheme: str = "sl"
    cfl: float = 0.2
    nt: int = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.cfl > 0:
            raise ValueError("cfl must be positive")
        if self.nt is not None and self.nt < 1:
            raise ValueError("nt must be positive")
        if self.scheme != "sl" and self.cfl > 0.5:
            warnings.warn(f"{self.scheme} with cfl {self.cfl} is likely unstable", stacklevel=2)

    def steps(self, v):
        return self.nt if self.nt is not None else cfl_steps(v, self.cfl)


def cfl_steps(v, cfl):
    """Smallest step count with ``max|v_i| ht / h_i <= cfl``, at least two."""
    grid = Grid.of(v)
    rate = max(np.max(np.abs(v[i])) / grid.h[i] for i in (0, 1))
    return max(2, math.ceil(rate / cfl - 1e-9))


@dataclass
class Characteristics:
    """Departure points of one time step for a stationary velocity.

    ``interp`` evaluates at the departure points and ``mid`` at the
    explicit-Euler predictor points.
    """

    departure: np.ndarray
    midpoint: np.ndarray
    ht: float
    direction: str
    interp: Interpolator
    mid: Interpolator


def trace_characteristics(v, ht, direction="forward"):
    """Trace departure points with the explicit trapezoidal rule.

    ``x* = x - ht u(x)`` and ``X = x - ht/2 (u(x) + u(x*))`` with ``u = v``
    for the forward family and ``u = -v`` for the backward family.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    grid = Grid.of(v)
    x = grid.coords()
    u = v if direction == "forward" else -v
    xs = x - ht * u
    mid = Interpolator(grid, xs)
    xd = x - 0.5 * ht * (u + mid(u))
    return Characteristics(xd, xs, ht, direction, Interpolator(grid, xd), mid)


def _guard(u, bound, what):
    if not np.all(np.isfinite(u)) or (bound > 0 and np.max(np.abs(u)) > bound):
        raise TransportBlowUp(f"{what} exceeded {BLOWUP_FACTOR:g} times its initial size")


class Transport:
    """Transport solvers for one stationary velocity field.

    Characteristics, the divergence of ``v`` and other per-velocity data are
    computed lazily and shared by all solves.
    """

    def __init__(self, v, cfg=SchemeConfig(), nt=None):
        self.v = np.asarray(v, dtype=float)
        self.grid = Grid.of(self.v)
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.nt = int(nt) if nt is not None else cfg.steps(self.v)
        self.ht = 1.0 / self.nt
        self._div = None
        self._chars = {}
        self._divd = {}

    @property
    def div(self):
        if self._div is None:
            self._div = divergence(self.v)
        return self._div

    def characteristics(self, direction="forward"):
        if direction not in self._chars:
            self._chars[direction] = trace_characteristics(self.v, self.ht, direction)
        return self._chars[direction]

    def _div_at_departure(self, direction):
        if direction not in self._divd:
            self._divd[direction] = self.characteristics(direction).interp(self.div)
        return self._divd[direction]

    # -- spatial operators for the Runge-Kutta schemes -------------------
    # ``op(u, w)`` is the right hand side of dm/dt for velocity ``w``; it is
    # linear in both arguments. ``op_t`` is its transpose in ``u`` and
    # ``pair`` satisfies <lam, op(u, w)> = <w, pair(lam, u)>.

    def op(self, u, w=None, divw=None):
        w = self.v if w is None else w
        gu = gradient(u)
        adv = w[0] * gu[0] + w[1] * gu[1]
        if self.scheme == "rk2":
            return -adv
        if divw is None:
            divw = self.div if w is self.v else divergence(w)
        return -0.5 * (adv + divergence(u * w) - u * divw)

    def op_t(self, lam, w=None, divw=None):
        w = self.v if w is None else w
        flux = divergence(lam * w)
        if self.scheme == "rk2":
            return flux
        if divw is None:
            divw = self.div if w is self.v else divergence(w)
        gl = gradient(lam)
        return 0.5 * (flux + w[0] * gl[0] + w[1] * gl[1] + lam * divw)

    def pair(self, lam, u):
        if self.scheme == "rk2":
            return -lam * gradient(u)
        return -0.5 * (lam * gradient(u) - u * gradient(lam) + gradient(lam * u))

    def body_integrand(self, lam, m):
        """Integrand of the continuous body force, ``lam grad m`` or its skew form."""
        if self.scheme == "rk2a":
            return 0.5 * (lam * gradient(m) - m * gradient(lam) + gradient(lam * m))
        return lam * gradient(m)

    def body_force(self, lam, m):
        """Time integral of :meth:`body_integrand` by the trapezoidal rule."""
        f = [self.body_integrand(lam[j], m[j]) for j in range(self.nt + 1)]
        return self.ht * (0.5 * f[0] + sum(f[1:-1]) + 0.5 * f[-1])

    def _heun(self, rhs, u, src0=0.0, src1=0.0):
        h = self.ht
        k0 = rhs(u) + src0
        k1 = rhs(u + h * k0) + src1
        return u + 0.5 * h * (k0 + k1)

    # -- solvers -----------------------------------------------------------

    def state(self, m0):
        """Solve dm/dt + v . grad m = 0 forward from ``m0``."""
        nt = self.nt
        out = np.empty((nt + 1,) + self.grid.n)
        out[0] = m0
        bound = BLOWUP_FACTOR * np.max(np.abs(m0))
        if self.scheme == "sl":
            interp = self.characteristics("forward").interp
            for j in range(nt):
                out[j + 1] = interp(out[j])
                _guard(out[j + 1], bound, "state")
        else:
            for j in range(nt):
                out[j + 1] = self._heun(self.op, out[j])
                _guard(out[j + 1], bound, "state")
        return out

    def adjoint(self, lam1, src=None):
        """Solve the adjoint equation backward from ``lam(1) = lam1``.

        ``src[j]`` is an optional source ``s`` at time node ``j`` so that
        ``-d lam/dt = (adjoint transport of lam) + s``.
        """
        nt, h = self.nt, self.ht
        out = np.empty((nt + 1,) + self.grid.n)
        out[nt] = lam1
        bound = BLOWUP_FACTOR * np.max(np.abs(lam1))
        if self.scheme == "sl":
            ch = self.characteristics("backward")
            dd = self._div_at_departure("backward")
            d = self.div
            for j in range(nt, 0, -1):
                mu = ch.interp(out[j])
                if src is None:
                    pred = mu * (1 + h * dd)
                    out[j - 1] = mu * (1 + 0.5 * h * dd) + 0.5 * h * d * pred
                else:
                    s0 = ch.interp(src[j])
                    pred = mu * (1 + h * dd) + h * s0
                    out[j - 1] = mu * (1 + 0.5 * h * dd) + 0.5 * h * (s0 + d * pred + src[j - 1])
                _guard(out[j - 1], bound, "adjoint")
        else:
            for j in range(nt, 0, -1):
                if src is None:
                    out[j - 1] = self._heun(self.op_t, out[j])
                else:
                    out[j - 1] = self._heun(self.op_t, out[j], src[j], src[j - 1])
                _guard(out[j - 1], bound, "adjoint")
        return out

    def inc_state(self, vt, m):
        """Incremental state equation discretized from its continuous form."""
        nt, h = self.nt, self.ht
        out = np.zeros((nt + 1,) + self.grid.n)
        if self.scheme == "sl":
            interp = self.characteristics("forward").interp
            f = [-(vt[0] * g[0] + vt[1] * g[1]) for g in map(gradient, m)]
            for j in range(nt):
                out[j + 1] = interp(out[j] + 0.5 * h * f[j]) + 0.5 * h * f[j + 1]
        else:
            divw = divergence(vt) if self.scheme == "rk2a" else None
            f = [self.op(m[j], vt, divw) for j in range(nt + 1)]
            for j in range(nt):
                out[j + 1] = self._heun(self.op, out[j], f[j], f[j + 1])
        return out

    def inc_adjoint(self, lt1, vt=None, lam=None):
        """Incremental adjoint equation from ``lam~(1) = lt1``.

        With ``vt`` and ``lam`` given, the full-Newton coupling with the
        adjoint trajectory is included; otherwise this is the Gauss-Newton
        form, which coincides with the adjoint equation.
        """
        if vt is None or lam is None:
            return self.adjoint(lt1)
        if self.scheme == "sl":
            src = [divergence(lam[j] * vt) for j in range(self.nt + 1)]
        else:
            divw = divergence(vt) if self.scheme == "rk2a" else None
            src = [self.op_t(lam[j], vt, divw) for j in range(self.nt + 1)]
        return self.adjoint(lt1, src)

    def jacobian_det(self):
        """Volume change of the forward flow, transported to ``t = 1``.

        Solves ``dJ/dt + v . grad J = J div v`` with ``J(0) = 1``.
        """
        nt, h = self.nt, self.ht
        J = np.ones(self.grid.n)
        d = self.div
        if self.scheme == "sl":
            ch = self.characteristics("forward")
            dd = self._div_at_departure("forward")
            for _ in range(nt):
                Jd = ch.interp(J)
                J = Jd * (1 + 0.5 * h * dd) + 0.5 * h * d * Jd * (1 + h * dd)
        else:
            def rhs(u):
                g = gradient(u)
                return -(self.v[0] * g[0] + self.v[1] * g[1]) + u * d
            for _ in range(nt):
                J = self._heun(rhs, J)
        return J

    def linearize(self, m):
        """Exact derivative of the discrete state map along trajectory ``m``."""
        if self.scheme == "sl":
            return _SLLinearization(self, m)
        return _RKLinearization(self, m)


class _RKLinearization:
    """Tangent and transpose of the Heun step ``S = I + hL + h^2 L^2 / 2``."""

    def __init__(self, tr, m):
        self.tr = tr
        self.m = m
        self.a = [tr.op(m[j]) for j in range(tr.nt)]

    def tangent(self, vt):
        tr, h = self.tr, self.tr.ht
        divw = divergence(vt) if tr.scheme == "rk2a" else None
        out = np.zeros((tr.nt + 1,) + tr.grid.n)
        for j in range(tr.nt):
            p = out[j]
            q = tr.op(p) + tr.op(self.m[j], vt, divw)
            out[j + 1] = p + h * q + 0.5 * h * h * (tr.op(q) + tr.op(self.a[j], vt, divw))
        return out

    def cotangent(self, lam1):
        """Return ``(lam, b)`` with ``b = -J^T lam1`` for the tangent map ``J``."""
        tr, h = self.tr, self.tr.ht
        lam = np.empty((tr.nt + 1,) + tr.grid.n)
        lam[tr.nt] = lam1
        b = np.zeros((2,) + tr.grid.n)
        bound = BLOWUP_FACTOR * np.max(np.abs(lam1))
        for j in range(tr.nt - 1, -1, -1):
            l1 = lam[j + 1]
            tl = tr.op_t(l1)
            b -= h * tr.pair(l1, self.m[j] + 0.5 * h * self.a[j]) + 0.5 * h * h * tr.pair(tl, self.m[j])
            lam[j] = l1 + h * tl + 0.5 * h * h * tr.op_t(tl)
            _guard(lam[j], bound, "adjoint")
        return lam, b


class _SLLinearization:
    """Tangent and transpose of the semi-Lagrangian state map.

    The step is ``m_{j+1} = s_j(X)`` with ``s_j`` the spline of ``m_j`` and
    ``X(v)`` the departure points, so the tangent is
    ``grad s_j(X) . dX + s~_j(X)``.
    """

    def __init__(self, tr, m):
        self.tr = tr
        self.m = m
        self.ch = tr.characteristics("forward")
        self.dm = [self.ch.interp.gradient(m[j]) for j in range(tr.nt)]
        self.jv = self.ch.mid.jacobian(tr.v)

    def _dx(self, vt):
        h = self.tr.ht
        vm = self.ch.mid(vt)
        jv = np.einsum("ik...,k...->i...", self.jv, vt)
        return -0.5 * h * (vt + vm - h * jv)

    def tangent(self, vt):
        tr = self.tr
        dx = self._dx(vt)
        out = np.zeros((tr.nt + 1,) + tr.grid.n)
        for j in range(tr.nt):
            out[j + 1] = self.ch.interp(out[j]) + self.dm[j][0] * dx[0] + self.dm[j][1] * dx[1]
        return out

    def cotangent(self, lam1):
        tr, h = self.tr, self.tr.ht
        lam = np.empty((tr.nt + 1,) + tr.grid.n)
        lam[tr.nt] = lam1
        G = np.zeros((2,) + tr.grid.n)
        for j in range(tr.nt - 1, -1, -1):
            G += lam[j + 1] * self.dm[j]
            lam[j] = self.ch.interp.adjoint(lam[j + 1])
        b = 0.5 * h * (G + self.ch.mid.adjoint(G) - h * np.einsum("ik...,i...->k...", self.jv, G))
        return lam, b


def solve_state(v, m0, cfg=SchemeConfig(), nt=None):
    return Transport(v, cfg, nt).state(m0)


def solve_adjoint(v, lam1, cfg=SchemeConfig(), nt=None):
    return Transport(v, cfg, nt).adjoint(lam1)


def solve_inc_state(v, vt, m, cfg=SchemeConfig(), nt=None):
    tr = Transport(v, cfg, nt if nt is not None else len(m) - 1)
    return tr.inc_state(vt, m)


def solve_inc_adjoint(v, lt1, cfg=SchemeConfig(), nt=None, vt=None, lam=None):
    return Transport(v, cfg, nt).inc_adjoint(lt1, vt, lam)


def jacobian_det(v, cfg=SchemeConfig(), nt=None):
    return Transport(v, cfg, nt).jacobian_det()
