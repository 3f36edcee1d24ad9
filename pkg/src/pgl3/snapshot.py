"""Binary field snapshots.

Layout (all integers little-endian)::

    b"PGL3"  magic
    u16      format version
    u32      header length, then that many bytes of UTF-8 JSON
    u64      payload length in bytes
    payload  float64 '<f8', one row-major block per component lattice
    u32      CRC-32 of the payload

The JSON header carries the grid spec, the field kind and the component count.
Polygonal currents use the same container with kind "current".
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .isoflux import PolyCurrent
from .mesh import ComplexField, GridSpec, ScalarField, VectorField, domain_from_dict

MAGIC = b"PGL3"
VERSION = 1


class SnapshotError(ValueError):
    pass


class ChecksumError(SnapshotError):
    pass


class VersionError(SnapshotError):
    pass


class TruncatedError(SnapshotError):
    pass


@dataclass(frozen=True)
class FieldSnapshot:
    header: dict
    payload: bytes
    checksum: int


def grid_to_dict(grid: GridSpec) -> dict:
    return {"box_min": list(grid.box_min), "box_max": list(grid.box_max), "n": list(grid.n),
            "omega": grid.omega.to_dict()}


def grid_from_dict(d: dict) -> GridSpec:
    return GridSpec(tuple(d["box_min"]), tuple(d["box_max"]), tuple(d["n"]),
                    domain_from_dict(d["omega"]))


def _blocks(obj):
    """(kind, component arrays, extra header entries)."""
    if isinstance(obj, ScalarField):
        return "scalar", [obj.values], {}
    if isinstance(obj, ComplexField):
        return "complex", [obj.values.real, obj.values.imag], {}
    if isinstance(obj, VectorField):
        return f"vector-{obj.location}", obj.components(), {}
    if isinstance(obj, PolyCurrent):
        seg = obj.segments
        cols = [seg[:, k] for k in range(6)] + [obj.mult.astype(float)]
        return "current", cols, {"weight": obj.weight, "current_kind": obj.kind,
                                 "segments": len(obj)}
    raise TypeError(f"cannot snapshot {type(obj).__name__}")


def encode(obj) -> bytes:
    kind, comps, extra = _blocks(obj)
    payload = b"".join(np.ascontiguousarray(c, dtype="<f8").tobytes() for c in comps)
    header = {"kind": kind, "components": len(comps), **extra}
    if kind != "current":
        header["grid"] = grid_to_dict(obj.grid)
    hb = json.dumps(header, sort_keys=True).encode()
    return b"".join([MAGIC, struct.pack("<HI", VERSION, len(hb)), hb,
                     struct.pack("<Q", len(payload)), payload,
                     struct.pack("<I", zlib.crc32(payload))])


def parse(data: bytes) -> FieldSnapshot:
    if data[:4] != MAGIC:
        raise SnapshotError("not a PGL3 snapshot (bad magic)")
    if len(data) < 10:
        raise TruncatedError("truncated header")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise VersionError(f"snapshot format version {version}, this reader supports {VERSION}")
    pos = 10 + hlen
    if len(data) < pos + 8:
        raise TruncatedError("truncated header")
    try:
        header = json.loads(data[10:pos].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"corrupt header: {exc}") from None
    (plen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + plen + 4:
        raise TruncatedError(f"payload truncated: expected {plen} bytes")
    payload = data[pos:pos + plen]
    (crc,) = struct.unpack_from("<I", data, pos + plen)
    if zlib.crc32(payload) != crc:
        raise ChecksumError("payload checksum mismatch")
    return FieldSnapshot(header, bytes(payload), crc)


def decode(snap: FieldSnapshot):
    h = snap.header
    flat = np.frombuffer(snap.payload, dtype="<f8").astype(float)
    kind = h["kind"]
    if kind == "current":
        m = int(h["segments"])
        if flat.size != 7 * m:
            raise TruncatedError("payload length does not match header")
        cols = flat.reshape(7, m)
        return PolyCurrent(cols[:6].T.copy(), cols[6].astype(np.int64), h["weight"],
                           h["current_kind"])
    grid = grid_from_dict(h["grid"])
    if kind == "scalar":
        sizes = [int(np.prod(grid.n))]
    elif kind == "complex":
        sizes = [int(np.prod(grid.n))] * 2
    elif kind in ("vector-face", "vector-edge"):
        loc = kind.split("-")[1]
        sizes = [int(np.prod(grid.shape(loc, k))) for k in range(3)]
    else:
        raise SnapshotError(f"unknown field kind {kind!r}")
    if len(sizes) != h["components"] or flat.size != sum(sizes):
        raise TruncatedError("payload length does not match header")
    if kind == "scalar":
        return ScalarField(grid, flat.reshape(grid.n))
    if kind == "complex":
        n = sizes[0]
        z = np.empty(n, dtype=complex)
        z.real, z.imag = flat[:n], flat[n:]  # keeps signed zeros
        return ComplexField(grid, z.reshape(grid.n))
    return VectorField(grid, flat, kind.split("-")[1])


def save_field(path, obj) -> FieldSnapshot:
    data = encode(obj)
    Path(path).write_bytes(data)
    return parse(data)


def load_field(path):
    return decode(parse(Path(path).read_bytes()))
