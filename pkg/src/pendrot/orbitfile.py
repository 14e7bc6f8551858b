"""Binary orbit checkpoints and their CSV mirror.

Layout (all little-endian):

    8 bytes   magic  b"PDRTORB\\0"
    u16       format version
    u32       header length H
    H bytes   UTF-8 JSON header: t_lo, dt, n, left, right, plan_hash, s
    n * f64   u
    n * f64   v

Floats in the header are written with ``repr`` so the grid round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError, UnsupportedVersion
from .trajectory import BoundaryCondition, Trajectory

MAGIC = b"PDRTORB\0"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_HEADER_KEYS = {"t_lo", "dt", "n", "left", "right", "plan_hash", "s"}


def plan_hash(plan) -> str | None:
    """sha256 of the plan's canonical JSON, or None without a plan."""
    if plan is None:
        return None
    blob = json.dumps(plan.as_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def encode_orbit(q: Trajectory, plan=None, s: float = 0.0) -> bytes:
    header = {
        "t_lo": float(q.t_lo),
        "dt": float(q.dt),
        "n": int(q.n),
        "left": q.left.as_dict(),
        "right": q.right.as_dict(),
        "plan_hash": plan_hash(plan),
        "s": float(s),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [
            _PREFIX.pack(MAGIC, VERSION, len(hb)),
            hb,
            np.ascontiguousarray(q.u, dtype="<f8").tobytes(),
            np.ascontiguousarray(q.v, dtype="<f8").tobytes(),
        ]
    )


def decode_orbit(data: bytes) -> tuple[Trajectory, dict]:
    """Inverse of :func:`encode_orbit`; returns the trajectory and its header."""
    if len(data) < _PREFIX.size:
        raise ParseError("truncated file prefix", offset=len(data))
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError("bad magic", offset=0)
    if version != VERSION:
        raise UnsupportedVersion(f"orbit format version {version}, this reader supports {VERSION}")
    off = _PREFIX.size
    if len(data) < off + hlen:
        raise ParseError("truncated header", offset=len(data))
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed header: {exc}", offset=off) from exc
    if not isinstance(header, dict) or set(header) != _HEADER_KEYS:
        raise ParseError("header keys do not match the format", offset=off)
    off += hlen
    n = header["n"]
    if not isinstance(n, int) or n < 1:
        raise ParseError("invalid sample count", offset=off)
    need = off + 16 * n
    if len(data) < need:
        raise ParseError(f"truncated arrays: expected {need} bytes, got {len(data)}", offset=len(data))
    if len(data) > need:
        raise ParseError("trailing bytes after arrays", offset=need)
    u = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    v = np.frombuffer(data, dtype="<f8", count=n, offset=off + 8 * n).astype(np.float64)
    try:
        left = BoundaryCondition(**header["left"])
        right = BoundaryCondition(**header["right"])
        q = Trajectory(float(header["t_lo"]), float(header["dt"]), u, v, left, right)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"invalid header values: {exc}", offset=_PREFIX.size) from exc
    return q, header


def write_orbit(path, q: Trajectory, plan=None, s: float = 0.0) -> Path:
    path = Path(path)
    path.write_bytes(encode_orbit(q, plan, s))
    return path


def read_orbit(path) -> tuple[Trajectory, dict]:
    return decode_orbit(Path(path).read_bytes())


def write_orbit_csv(path, q: Trajectory) -> Path:
    """Columns t, u, v with 17 significant digits."""
    path = Path(path)
    np.savetxt(path, np.column_stack([q.t, q.u, q.v]), fmt="%.17g", delimiter=",", header="t,u,v", comments="")
    return path
