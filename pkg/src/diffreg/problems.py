"""Registration problems: analytic test cases, synthetic pairs and image I/O."""
from dataclasses import dataclass, field
import os

import numpy as np

from .spectral import Grid, fft, ifft, resample, symbols
from .transport import SchemeConfig, Transport

SYNTH_SCHEME = SchemeConfig("sl", 0.2)


@dataclass
class RegistrationProblem:
    """Reference image ``m_r``, template ``m_t`` and optional ground truth.

    ``v_true`` is a velocity whose flow maps the template onto the reference
    (up to transport discretization), when one is known.
    """

    m_r: np.ndarray
    m_t: np.ndarray
    source: str = "synthetic"
    v_true: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m_r.shape != self.m_t.shape:
            raise ValueError(f"image shapes differ: {self.m_r.shape} vs {self.m_t.shape}")
        self.grid = Grid.of(self.m_r)

    def restricted(self, grid):
        """Same problem resampled to another grid."""
        vt = None if self.v_true is None else resample(self.v_true, grid)
        return RegistrationProblem(resample(self.m_r, grid), resample(self.m_t, grid),
                                   self.source, vt, dict(self.meta))


def smooth_velocity(grid, variant="A"):
    x1, x2 = grid.coords()
    if variant == "A":
        return 0.5 * np.stack([np.sin(x2) * np.cos(x1), np.sin(x1) * np.cos(x2)])
    if variant == "B":
        return np.stack([np.sin(2 * x2) * np.cos(2 * x1), np.sin(2 * x1) * np.cos(2 * x2)])
    raise ValueError(f"unknown smooth variant {variant!r}")


def swirl_velocity(grid, amplitude=0.5):
    """Divergence-free field ``(-d psi/dx2, d psi/dx1)`` with ``psi = a cos x1 cos x2``.

    The smooth test velocities above are gradients, so they have no
    divergence-free part; this one is used for incompressible problems.
    """
    x1, x2 = grid.coords()
    return amplitude * np.stack([np.cos(x1) * np.sin(x2), -np.sin(x1) * np.cos(x2)])


def smooth_image(grid, variant="A"):
    x1, x2 = grid.coords()
    if variant == "A":
        return 0.25 * (1 + np.cos(x1)) * (1 + np.cos(x2))
    if variant == "B":
        return 0.25 * (1 + np.cos(x1)) * (1 + np.cos(2 * x2))
    raise ValueError(f"unknown smooth variant {variant!r}")


def blob_image(grid, n_blobs=24, seed=0, width=(0.25, 0.6)):
    """Smooth periodic image made of randomly placed bumps, scaled to [0, 1].

    The image is defined analytically, so samples on nested grids agree.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = grid.coords()
    u = np.zeros(grid.n)
    for _ in range(n_blobs):
        c = rng.uniform(-np.pi, np.pi, 2)
        s = rng.uniform(*width)
        a = rng.uniform(0.3, 1.0)
        r2 = 2 - 2 * np.cos(x1 - c[0]) + 2 - 2 * np.cos(x2 - c[1])
        u += a * np.exp(-r2 / (2 * s * s))
    return normalize(u)


def make_smooth_problem(variant, grid):
    """Analytic test case: template is the reference carried by the velocity."""
    if variant.upper() not in ("A", "B"):
        raise ValueError(f"unknown smooth variant {variant!r}")
    variant = variant.upper()
    v = smooth_velocity(grid, variant)
    m_r = smooth_image(grid, variant)
    m_t = Transport(v, SYNTH_SCHEME).state(m_r)[-1]
    return RegistrationProblem(m_r, m_t, f"smooth-{variant.lower()}", v_true=-v,
                               meta={"v_star": v})


def make_synthetic_pair(v_star, m_r):
    """Template obtained by transporting ``m_r`` with ``v_star``.

    For a stationary field the flow of ``-v_star`` inverts that of
    ``v_star``, so ``-v_star`` registers the pair.
    """
    if v_star.shape[-2:] != m_r.shape:
        raise ValueError("velocity and image grids differ")
    m_t = Transport(v_star, SYNTH_SCHEME).state(m_r)[-1]
    return RegistrationProblem(m_r, m_t, "synthetic", v_true=-v_star, meta={"v_star": v_star})


def gaussian_smooth(u, sigma):
    """Spectral Gaussian filter; ``sigma`` is measured in grid cells."""
    n = u.shape[-2:]
    if sigma <= 0:
        return np.array(u, dtype=float)
    k1, k2, _, _, _ = symbols(tuple(n))
    s1, s2 = (sigma * 2 * np.pi / k for k in n)
    return ifft(fft(u) * np.exp(-0.5 * ((k1 * s1) ** 2 + (k2 * s2) ** 2)), n)


def normalize(u):
    """Affine map to [0, 1]; a constant image maps to zero."""
    lo, hi = float(np.min(u)), float(np.max(u))
    if hi - lo <= 1e-14 * max(1.0, abs(hi)):
        return np.zeros_like(u, dtype=float)
    return (u - lo) / (hi - lo)


def preprocess(u, sigma=1.0):
    return normalize(gaussian_smooth(u, sigma))


def _pgm_tokens(data, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_pgm(path):
    """Read a binary (P5) PGM with 8 or 16 bit samples into [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (width, height, maxval), pos = _pgm_tokens(data, 3)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    if len(data) - pos < nbytes:
        raise ValueError(f"{path}: truncated pixel data")
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return img.reshape(height, width).astype(float) / maxval


def write_pgm(path, u):
    """Write a field as a 16 bit P5 PGM after mapping it to [0, 1]."""
    img = np.round(normalize(u) * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n65535\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def load_image(path, grid, sigma=1.0):
    """Read an image (PGM or field file), resample it to ``grid`` and preprocess."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        img = read_pgm(path)
    else:
        from .fieldio import read_field
        img = read_field(path)
        if img.ndim != 2:
            raise ValueError(f"{path}: expected a scalar field")
    return preprocess(resample(img, grid), sigma)
