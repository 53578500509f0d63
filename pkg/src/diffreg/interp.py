"""Periodic cubic B-spline interpolation at scattered points.

A field is first converted to B-spline coefficients by a circulant
prefilter (an exact FFT division), then evaluated at arbitrary points with
the 4x4 tensor-product stencil. The evaluation weights for a fixed point set
are stored as a sparse matrix, so the transposed (scatter) operation is
available for discrete adjoints.
"""
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .counters import bump
from .spectral import Grid, symbols


@lru_cache(maxsize=None)
def _spline_symbol(n):
    k1, k2, _, _, _ = symbols(n)
    s1 = (4 + 2 * np.cos(2 * np.pi * k1 / n[0])) / 6
    s2 = (4 + 2 * np.cos(2 * np.pi * k2 / n[1])) / 6
    s = s1 * s2
    s.setflags(write=False)
    return s


def prefilter(u):
    """B-spline coefficients whose spline reproduces ``u`` at the nodes."""
    n = u.shape[-2:]
    return sfft.irfft2(sfft.rfft2(u, axes=(-2, -1)) / _spline_symbol(tuple(n)),
                       s=n, axes=(-2, -1))


def _weights(f):
    g = 1 - f
    w = np.stack([g**3, 3 * f**3 - 6 * f**2 + 4, -3 * f**3 + 3 * f**2 + 3 * f + 1, f**3]) / 6
    dw = np.stack([-(g**2), 3 * f**2 - 4 * f, -3 * f**2 + 2 * f + 1, f**2]) / 2
    return w, dw


class Interpolator:
    """Cubic B-spline evaluation at a fixed set of physical points.

    Parameters
    ----------
    grid : Grid
        Grid that carries the sampled fields.
    points : ndarray, shape (2, ...)
        Physical coordinates; they are wrapped into the periodic box.
    """

    def __init__(self, grid, points):
        if not np.all(np.isfinite(points)):
            raise ValueError("interpolation points must be finite")
        self.grid = grid
        self.points = points
        self.out_shape = points.shape[1:]
        npts = int(np.prod(self.out_shape, dtype=int))
        n1, n2 = grid.n
        idx, w, dw = [], [], []
        for i in (0, 1):
            t = (points[i].ravel() + np.pi) / grid.h[i]
            base = np.floor(t)
            wi, dwi = _weights(t - base)
            ii = (base.astype(np.int64)[None, :] + np.arange(-1, 3)[:, None]) % grid.n[i]
            idx.append(ii)
            w.append(wi)
            dw.append(dwi / grid.h[i])
        self._cols = (idx[0][:, None, :] * n2 + idx[1][None, :, :]).reshape(16, npts).T.ravel()
        self._w = w
        self._dw = dw
        self._npts = npts
        self._mats = {}

    def _matrix(self, which):
        if which not in self._mats:
            w1, w2 = self._w
            if which == 1:
                w1 = self._dw[0]
            elif which == 2:
                w2 = self._dw[1]
            data = (w1[:, None, :] * w2[None, :, :]).reshape(16, self._npts).T.ravel()
            indptr = np.arange(0, 16 * self._npts + 1, 16)
            self._mats[which] = sp.csr_matrix(
                (data, self._cols, indptr), shape=(self._npts, self.grid.size))
        return self._mats[which]

    @property
    def matrix(self):
        """Sparse evaluation matrix acting on flattened coefficients."""
        return self._matrix(0)

    def _apply(self, which, c):
        lead = c.shape[:-2]
        flat = c.reshape(-1, self.grid.size).T
        out = self._matrix(which) @ flat
        return out.T.reshape(lead + self.out_shape)

    def __call__(self, u, prefiltered=False):
        """Evaluate the spline of ``u`` (scalar or stacked fields)."""
        bump("interp", int(np.prod(u.shape[:-2], dtype=int)))
        c = u if prefiltered else prefilter(u)
        return self._apply(0, c)

    def gradient(self, u, prefiltered=False):
        """Spatial gradient of the spline of a scalar field at the points."""
        bump("interp", 2)
        c = u if prefiltered else prefilter(u)
        return np.stack([self._apply(1, c), self._apply(2, c)])

    def jacobian(self, v):
        """Array ``J[i, k] = d v_i / d x_k`` of a vector field's spline."""
        return np.stack([self.gradient(v[i]) for i in range(v.shape[0])])

    def adjoint(self, y):
        """Transpose of :meth:`__call__` with respect to plain sums."""
        bump("interp", int(np.prod(y.shape[: y.ndim - len(self.out_shape)], dtype=int)))
        lead = y.shape[: y.ndim - len(self.out_shape)]
        flat = y.reshape(-1, self._npts).T
        c = (self.matrix.T @ flat).T.reshape(lead + self.grid.n)
        return prefilter(c)


def evaluate(coeffs, points):
    """Evaluate B-spline coefficients at ``points`` of shape ``(2, ...)``."""
    return Interpolator(Grid.of(coeffs), points)(coeffs, prefiltered=True)


def interpolate(u, points):
    """Prefilter ``u`` and evaluate its spline at ``points``."""
    return Interpolator(Grid.of(u), points)(u)
