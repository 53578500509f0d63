"""Fourier pseudospectral operators on the periodic box (-pi, pi)^2.

Scalar fields are real arrays of shape ``(n1, n2)`` and vector fields are
arrays of shape ``(2, n1, n2)``; axis 0 of a field is the first spatial
coordinate. Node ``j`` along axis ``i`` sits at ``-pi + j * 2 pi / n_i``.

First-derivative symbols drop the Nyquist mode so that gradient and
divergence are exact negative transposes of each other; even-order symbols
keep it.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .counters import bump

NORMS = {"h1": 1, "h2": 2, "h3": 3}


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n = (n1, n2)`` nodes."""

    n: tuple

    def __post_init__(self):
        n = tuple(int(k) for k in self.n)
        if len(n) != 2:
            raise ValueError(f"expected two grid sizes, got {self.n}")
        for k in n:
            if k < 4 or k % 2:
                raise ValueError(f"grid sizes must be even and >= 4, got {n}")
        object.__setattr__(self, "n", n)

    @classmethod
    def of(cls, field):
        return cls(field.shape[-2:])

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return self.n[0] * self.n[1]

    @property
    def h(self):
        return (2 * np.pi / self.n[0], 2 * np.pi / self.n[1])

    @property
    def cell_volume(self):
        return self.h[0] * self.h[1]

    def coords(self):
        """Node coordinates as an array of shape ``(2, n1, n2)``."""
        return _coords(self.n)

    def coarse(self):
        return Grid((self.n[0] // 2, self.n[1] // 2))

    def fine(self):
        return Grid((2 * self.n[0], 2 * self.n[1]))


@lru_cache(maxsize=None)
def _coords(n):
    axes = [-np.pi + 2 * np.pi * np.arange(k) / k for k in n]
    x = np.stack(np.meshgrid(*axes, indexing="ij"))
    x.setflags(write=False)
    return x


@lru_cache(maxsize=None)
def symbols(n):
    """Wavenumber arrays in the half-spectrum layout of ``rfft2``.

    Returns ``(k1, k2, d1, d2, ksq)``: the integer wavenumbers, the
    first-derivative wavenumbers with Nyquist zeroed, and ``|k|^2``.
    """
    n1, n2 = n
    k1 = np.fft.fftfreq(n1, 1.0 / n1)
    k2 = np.fft.rfftfreq(n2, 1.0 / n2)
    k1, k2 = np.meshgrid(k1, k2, indexing="ij")
    d1 = np.where(np.abs(k1) == n1 // 2, 0.0, k1)
    d2 = np.where(k2 == n2 // 2, 0.0, k2)
    ksq = k1**2 + k2**2
    out = (k1, k2, d1, d2, ksq)
    for a in out:
        a.setflags(write=False)
    return out


def _nfields(u):
    return int(np.prod(u.shape[:-2], dtype=int))


def fft(u):
    """Unscaled forward real transform over the last two axes."""
    bump("fft", _nfields(u))
    return sfft.rfft2(u, axes=(-2, -1))


def ifft(uh, n):
    """Inverse of :func:`fft`; carries the ``1/N`` normalization."""
    bump("fft", _nfields(uh))
    return sfft.irfft2(uh, s=n, axes=(-2, -1))


def gradient(u):
    n = u.shape[-2:]
    _, _, d1, d2, _ = symbols(n)
    uh = fft(u)
    return ifft(np.stack([1j * d1 * uh, 1j * d2 * uh]), n)


def divergence(v):
    n = v.shape[-2:]
    _, _, d1, d2, _ = symbols(n)
    vh = fft(v)
    return ifft(1j * (d1 * vh[0] + d2 * vh[1]), n)


def laplacian(u):
    n = u.shape[-2:]
    return ifft(-symbols(n)[4] * fft(u), n)


@dataclass(frozen=True, eq=False)
class SpectralWeights:
    """Per-mode symbol of a regularization operator.

    ``gamma`` is ``|k|^2``, ``|k|^4`` or ``|k|^6`` for the H1, H2 and H3
    seminorms; ``gamma_reg`` replaces its zeros by one so the operator can be
    inverted on the constant mode.
    """

    norm: str
    n: tuple
    gamma: np.ndarray
    gamma_reg: np.ndarray

    @classmethod
    def build(cls, grid, norm):
        return _weights(grid.n if isinstance(grid, Grid) else tuple(grid), norm)


@lru_cache(maxsize=None)
def _weights(n, norm):
    norm = norm.lower()
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; choose from {sorted(NORMS)}")
    gamma = symbols(n)[4] ** NORMS[norm]
    gamma_reg = np.where(gamma == 0, 1.0, gamma)
    return SpectralWeights(norm, n, gamma, gamma_reg)


def apply_reg(v, weights, beta):
    """Apply ``beta * A`` where ``A`` is the regularization operator."""
    n = v.shape[-2:]
    return ifft(beta * weights.gamma * fft(v), n)


def apply_inv_reg(v, weights, beta, power=-1.0):
    """Apply ``(beta * A_reg) ** power`` with ``power`` in ``{-1, -1/2}``."""
    if power not in (-1.0, -0.5):
        raise ValueError(f"power must be -1 or -1/2, got {power}")
    n = v.shape[-2:]
    return ifft((beta * weights.gamma_reg) ** power * fft(v), n)


def project_div_free(b):
    """Orthogonal projection onto divergence-free fields (mean kept)."""
    n = b.shape[-2:]
    _, _, d1, d2, _ = symbols(n)
    bh = fft(b)
    kk = d1**2 + d2**2
    c = (d1 * bh[0] + d2 * bh[1]) / np.where(kk == 0, 1.0, kk)
    return ifft(np.stack([bh[0] - d1 * c, bh[1] - d2 * c]), n)


def _resample_axis(uh, axis, n_src, n_tgt):
    if n_src == n_tgt:
        return uh
    m = min(n_src, n_tgt)
    shape = list(uh.shape)
    shape[axis] = n_tgt
    out = np.zeros(shape, dtype=complex)
    keep = (m - 1) // 2

    def sl(i):
        idx = [slice(None)] * uh.ndim
        idx[axis] = i
        return tuple(idx)

    out[sl(slice(0, keep + 1))] = uh[sl(slice(0, keep + 1))]
    if keep:
        out[sl(slice(n_tgt - keep, n_tgt))] = uh[sl(slice(n_src - keep, n_src))]
    if m % 2 == 0:
        half = m // 2
        if n_tgt < n_src:
            out[sl(half)] = uh[sl(half)] + uh[sl(n_src - half)]
        else:
            out[sl(half)] = 0.5 * uh[sl(half)]
            out[sl(n_tgt - half)] = 0.5 * uh[sl(half)]
    return out


def resample(u, target):
    """Fourier restriction (truncation) or prolongation (zero padding).

    ``target`` is a :class:`Grid` or a shape. The source may have any size;
    the target must be even. Modes at the target Nyquist frequency are
    folded on restriction and split on prolongation, so that prolongation
    followed by restriction is the identity and restriction of a band-limited
    field is exact point sampling.
    """
    n_tgt = target.n if isinstance(target, Grid) else tuple(int(k) for k in target)
    if any(k % 2 or k < 2 for k in n_tgt):
        raise ValueError(f"target sizes must be even, got {n_tgt}")
    n_src = u.shape[-2:]
    if tuple(n_src) == n_tgt:
        return np.array(u, dtype=float)
    nf = _nfields(u)
    bump("fft", 2 * nf)
    uh = sfft.fft2(u, axes=(-2, -1))
    nd = u.ndim
    for ax in (0, 1):
        uh = _resample_axis(uh, nd - 2 + ax, n_src[ax], n_tgt[ax])
    scale = (n_tgt[0] * n_tgt[1]) / (n_src[0] * n_src[1])
    return sfft.ifft2(uh * scale, axes=(-2, -1)).real


def restrict(u):
    n = u.shape[-2:]
    return resample(u, (n[0] // 2, n[1] // 2))


def prolong(u):
    n = u.shape[-2:]
    return resample(u, (2 * n[0], 2 * n[1]))


@lru_cache(maxsize=None)
def _low_mask(n):
    k1, k2, _, _, _ = symbols(n)
    mask = (4 * np.abs(k1) < n[0]) & (4 * np.abs(k2) < n[1])
    mask.setflags(write=False)
    return mask


def cutoff_filter(u, kind="low"):
    """Split a field at half the grid's Nyquist frequency.

    ``low`` keeps modes with ``|k_i| < n_i / 4`` on every axis, i.e. the modes
    the half-resolution grid represents without its own Nyquist mode;
    ``high`` is the complement.
    """
    n = u.shape[-2:]
    low = ifft(fft(u) * _low_mask(tuple(n)), n)
    if kind == "low":
        return low
    if kind == "high":
        return u - low
    raise ValueError(f"kind must be 'low' or 'high', got {kind!r}")


def inner(u, w):
    """Discrete L2 inner product with the cell-volume weight."""
    n = u.shape[-2:]
    return float(np.sum(u * w)) * (2 * np.pi) ** 2 / (n[0] * n[1])


def norm(u):
    return np.sqrt(inner(u, u))


def band_limited_noise(grid, rng, ncomp=None, keep=2 / 3):
    """Random real field with the top third of modes removed."""
    shape = grid.n if ncomp is None else (ncomp,) + grid.n
    u = rng.standard_normal(shape)
    k1, k2, _, _, _ = symbols(grid.n)
    mask = (np.abs(k1) < keep * grid.n[0] / 2) & (np.abs(k2) < keep * grid.n[1] / 2)
    return ifft(fft(u) * mask, grid.n)
