"""Binary snapshots and the energy time-series CSV.

Layout (little-endian):
    b"ISOPYC1"          magic, 7 bytes
    u32 version         = 1
    u32 d, Nr, Nx       grid dimensions (Nr is Nz for Eulerian snapshots)
    f64 eps, mu, t
    3 bytes             coordinate tag, b"iso" or b"eul"
    u32 nfields
    per field: u32 name length, utf-8 name, Nr * Nx**d f64 values, r-index outermost
"""

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import FlowState, Grid
from .errors import FormatMismatch, IOFailure

MAGIC = b"ISOPYC1"
VERSION = 1
_HEAD = struct.Struct("<7sIIII3d3sI")
_U32 = struct.Struct("<I")


@dataclass
class Snapshot:
    coordinate: str
    d: int
    Nr: int
    Nx: int
    epsilon: float
    mu: float
    t: float
    fields: dict

    def grid(self, L=2 * math.pi):
        return Grid(d=self.d, Nx=self.Nx, Nr=self.Nr, L=L)

    def to_state(self, L=2 * math.pi):
        """FlowState (tag iso) or EulerianState (tag eul) on a grid of period L."""
        g = self.grid(L)
        f = self.fields
        V = np.stack([f[f"V{j}"] for j in range(self.d)])
        if self.coordinate == "iso":
            return FlowState(g, V, f["w"], f["eta"], self.t)
        from .euler_bridge import EulerianState
        return EulerianState(g, V, f["w"], f["rho"], self.t)


def _fields_of(state):
    from .euler_bridge import EulerianState
    out = {f"V{j}": state.V[j] for j in range(state.grid.d)}
    out["w"] = state.w
    if isinstance(state, EulerianState):
        out["rho"] = state.rho
        return "eul", out
    out["eta"] = state.eta
    return "iso", out


def encode_snapshot(state, params):
    tag, fields = _fields_of(state)
    g = state.grid
    parts = [_HEAD.pack(MAGIC, VERSION, g.d, g.Nr, g.Nx, params.epsilon, params.mu, state.t,
                        tag.encode(), len(fields))]
    for name, a in fields.items():
        b = name.encode("utf-8")
        parts.append(_U32.pack(len(b)))
        parts.append(b)
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_snapshot(data):
    n = len(data)
    if n < _HEAD.size:
        raise FormatMismatch(f"snapshot header needs {_HEAD.size} bytes, found {n}")
    magic, version, d, Nr, Nx, eps, mu, t, tag, nf = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise FormatMismatch(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatMismatch(f"snapshot version {version}, this reader handles version {VERSION}")
    if tag not in (b"iso", b"eul"):
        raise FormatMismatch(f"unknown coordinate tag {tag!r}")
    count = Nr * Nx ** d
    off = _HEAD.size
    fields = {}
    for _ in range(nf):
        if off + 4 > n:
            raise FormatMismatch(f"truncated snapshot: expected at least {off + 4} bytes, found {n}")
        (ln,) = _U32.unpack_from(data, off)
        off += 4
        need = off + ln + 8 * count
        if need > n:
            raise FormatMismatch(f"truncated snapshot: expected at least {need} bytes, found {n}")
        name = data[off:off + ln].decode("utf-8")
        off += ln
        a = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        fields[name] = a.astype(float).reshape((Nr,) + (Nx,) * d)
        off += 8 * count
    if off != n:
        raise FormatMismatch(f"snapshot size mismatch: expected {off} bytes, found {n}")
    return Snapshot(tag.decode(), d, Nr, Nx, eps, mu, t, fields)


def write_snapshot(path, state, params):
    try:
        Path(path).write_bytes(encode_snapshot(state, params))
    except OSError as e:
        raise IOFailure(f"cannot write snapshot {path}: {e.strerror}") from None


def read_snapshot(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IOFailure(f"cannot read snapshot {path}: {e.strerror}") from None
    return decode_snapshot(data)


CSV_COLUMNS = ("t", "E0", "E", "div_residual", "min_jacobian", "mh_margin", "status")


class EnergyCSV:
    """Energy time series, one row per report; floats written with repr for exact reproducibility."""

    def __init__(self, path):
        try:
            self._fh = open(path, "w", newline="")
        except OSError as e:
            raise IOFailure(f"cannot write {path}: {e.strerror}") from None
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_COLUMNS)

    def write(self, report):
        self._w.writerow([repr(float(getattr(report, c))) for c in CSV_COLUMNS[:-1]] + [report.status])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_energy_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "status" else float(v)) for k, v in r.items()} for r in rows]
