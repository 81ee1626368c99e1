"""Binary container and CSV exports for coefficient fields and trajectories.

Container layout (all integers and floats in the byte order named by byte 5)::

    offset  size  content
    0       5     magic b"NPDE1"
    5       1     byte order: b"<" little endian, b">" big endian
    6       4     kind tag: b"COEF" or b"TRAJ"
    10      4     uint32 n, number of header integers
    14      8n    uint64 header integers
    14+8n   ...   float64 payload

``COEF`` headers are ``(d, nt, *grid_shape)``; the payload is ``alpha``,
``beta``, ``gamma``, ``theta``, ``delta`` in C order.  ``TRAJ`` headers are
``(d, n_times, has_energy, *grid_shape)``; the payload is ``times``,
``states`` and, when present, ``energy``.  Files are written little endian.
"""

import csv
import struct

import numpy as np

from ._errors import FormatError
from .parabolic import CoefficientFields, Trajectory

MAGIC = b"NPDE1"
KINDS = (b"COEF", b"TRAJ")


class TruncatedFile(OSError):
    """The container ended before its declared payload."""


def _pack(kind, header, arrays, order="<"):
    out = [MAGIC, order.encode(), kind, struct.pack(order + "I", len(header))]
    out.append(struct.pack(order + f"{len(header)}Q", *(int(h) for h in header)))
    dt = np.dtype(order + "f8")
    out += [np.ascontiguousarray(a, dtype=dt).tobytes() for a in arrays]
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"container truncated at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def floats(self, shape, order):
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * n), dtype=np.dtype(order + "f8")).reshape(shape).astype(float)


def _unpack(data, expected):
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an NPDE1 container (bad magic)")
    order = r.take(1).decode("latin-1")
    if order not in "<>":
        raise FormatError(f"unknown byte-order flag {order!r}")
    kind = r.take(4)
    if kind not in KINDS:
        raise FormatError(f"unknown kind tag {kind!r}")
    if kind != expected:
        raise FormatError(f"container holds {kind.decode()}, expected {expected.decode()}")
    (n,) = struct.unpack(order + "I", r.take(4))
    header = struct.unpack(order + f"{n}Q", r.take(8 * n))
    return r, order, header


def dumps_fields(coeffs, order="<"):
    s = coeffs.gamma.shape[1:]
    header = (coeffs.dim, coeffs.nt) + s
    return _pack(b"COEF", header, [coeffs.alpha, coeffs.beta, coeffs.gamma, coeffs.theta, coeffs.delta], order)


def loads_fields(data):
    r, order, header = _unpack(data, b"COEF")
    if len(header) < 3:
        raise FormatError("COEF header too short")
    d, nt, s = header[0], header[1], tuple(header[2:])
    if len(s) != d:
        raise FormatError("COEF header dimension does not match the grid shape")
    alpha = r.floats((nt, d) + s, order)
    beta = r.floats((nt, d, d) + s, order)
    gamma, theta, delta = (r.floats((nt,) + s, order) for _ in range(3))
    return CoefficientFields(alpha, beta, gamma, theta, delta)


def dumps_trajectory(traj, order="<"):
    states = np.asarray(traj.states, dtype=float)
    s = states.shape[1:]
    has_energy = traj.energy is not None
    header = (len(s), len(states), int(has_energy)) + s
    arrays = [traj.times, states] + ([traj.energy] if has_energy else [])
    return _pack(b"TRAJ", header, arrays, order)


def loads_trajectory(data):
    r, order, header = _unpack(data, b"TRAJ")
    if len(header) < 4:
        raise FormatError("TRAJ header too short")
    d, n, has_energy, s = header[0], header[1], header[2], tuple(header[3:])
    if len(s) != d:
        raise FormatError("TRAJ header dimension does not match the grid shape")
    times = r.floats((n,), order)
    states = r.floats((n,) + s, order)
    energy = r.floats((n,), order) if has_energy else None
    return Trajectory(times, states, energy)


def save_fields(path, obj, order="<"):
    """Write ``CoefficientFields`` or a ``Trajectory`` to an NPDE1 container."""
    if isinstance(obj, CoefficientFields):
        data = dumps_fields(obj, order)
    elif isinstance(obj, Trajectory):
        data = dumps_trajectory(obj, order)
    else:
        raise TypeError(f"cannot store {type(obj).__name__}")
    with open(path, "wb") as fh:
        fh.write(data)


def load_fields(path, kind=CoefficientFields):
    """Read a container; ``kind`` is ``CoefficientFields`` or ``Trajectory``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if kind is CoefficientFields:
        return loads_fields(data)
    if kind is Trajectory:
        return loads_trajectory(data)
    raise TypeError(f"unsupported kind {kind!r}")


def _coords(grid):
    return [c.ravel() for c in grid.mesh()]


def write_trajectory_csv(path, traj, grid):
    """Long-format CSV ``t,x[,y],m`` with one row per time and grid point."""
    names = ["x", "y"][: grid.dim]
    coords = _coords(grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names + ["m"])
        for t, m in zip(traj.times, np.asarray(traj.states)):
            for j, val in enumerate(np.ravel(m)):
                w.writerow([repr(float(t))] + [repr(float(c[j])) for c in coords] + [repr(float(val))])


def write_fields_csv(path, coeffs, grid):
    """Long-format CSV ``k,x[,y],alpha_i...,beta_ij...,gamma,theta,delta``."""
    d = grid.dim
    names = ["x", "y"][:d]
    cols = [f"alpha_{i + 1}" for i in range(d)]
    cols += [f"beta_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    cols += ["gamma", "theta", "delta"]
    coords = _coords(grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + names + cols)
        for k in range(coeffs.nt):
            blocks = [coeffs.alpha[k, i].ravel() for i in range(d)]
            blocks += [coeffs.beta[k, i, j].ravel() for i in range(d) for j in range(d)]
            blocks += [coeffs.gamma[k].ravel(), coeffs.theta[k].ravel(), coeffs.delta[k].ravel()]
            for p in range(grid.size):
                w.writerow([k] + [repr(float(c[p])) for c in coords] + [repr(float(b[p])) for b in blocks])


__all__ = [
    "FormatError", "MAGIC", "TruncatedFile", "dumps_fields", "dumps_trajectory", "load_fields",
    "loads_fields", "loads_trajectory", "save_fields", "write_fields_csv", "write_trajectory_csv",
]
