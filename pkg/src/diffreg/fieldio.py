"""Binary field files and flat key=value configuration files.

Field file layout (all little endian)::

    bytes 0-3    magic b"VRF1"
    uint32       n1
    uint32       n2
    uint32       number of components
    float64[...] samples, component by component, each row-major (n1, n2)
"""
import struct

import numpy as np

MAGIC = b"VRF1"
_HEADER = struct.Struct("<4sIII")


def write_field(path, u):
    u = np.asarray(u, dtype="<f8")
    comps = u[None] if u.ndim == 2 else u
    if comps.ndim != 3:
        raise ValueError(f"expected a scalar or vector field, got shape {u.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, comps.shape[1], comps.shape[2], comps.shape[0]))
        f.write(np.ascontiguousarray(comps).tobytes())


def read_field(path):
    """Read a field file; scalar fields come back with shape ``(n1, n2)``."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, n1, n2, nc = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = f.read()
    if len(data) != 8 * n1 * n2 * nc:
        raise ValueError(f"{path}: expected {8 * n1 * n2 * nc} data bytes, found {len(data)}")
    u = np.frombuffer(data, dtype="<f8").reshape(nc, n1, n2).astype(float)
    return u[0] if nc == 1 else u


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for num, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{num}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out
