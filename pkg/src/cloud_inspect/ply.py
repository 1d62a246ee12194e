"""PLY point-cloud reading and writing (ascii and binary little-endian).

Reading accepts the de-facto header grammar: comment/obj_info lines, extra
fixed-size vertex properties (skipped by size), and trailing non-vertex
elements such as faces (ignored). Coordinates must be float32 or float64
under the names x/y/z; colors, when present, must be uint8 red/green/blue.
Written files are byte-stable: the same cloud always serializes to the same
bytes, and a float64 write/read round trip is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud

__all__ = ["PlyError", "PlyHeader", "read_header", "read_ply", "write_ply",
           "load_ply", "save_ply"]

ASCII = "ascii"
BINARY_LE = "binary_little_endian"

# name used in headers -> (canonical name, numpy little-endian dtype)
_SCALAR_KINDS = {
    "char": ("int8", "<i1"), "int8": ("int8", "<i1"),
    "uchar": ("uint8", "<u1"), "uint8": ("uint8", "<u1"),
    "short": ("int16", "<i2"), "int16": ("int16", "<i2"),
    "ushort": ("uint16", "<u2"), "uint16": ("uint16", "<u2"),
    "int": ("int32", "<i4"), "int32": ("int32", "<i4"),
    "uint": ("uint32", "<u4"), "uint32": ("uint32", "<u4"),
    "float": ("float32", "<f4"), "float32": ("float32", "<f4"),
    "double": ("float64", "<f8"), "float64": ("float64", "<f8"),
}

_COLOR_ALIASES = {"r": "red", "g": "green", "b": "blue"}


class PlyError(ValueError):
    """Malformed or unsupported PLY content; offset is a byte position."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message)


@dataclass(frozen=True)
class PlyHeader:
    """Summary of the vertex element as declared by the header."""

    format: str  # "ascii" or "binary_little_endian"
    vertex_count: int
    has_color: bool
    property_order: tuple[tuple[str, str], ...]  # (name, canonical scalar kind)


@dataclass
class _Element:
    name: str
    count: int
    properties: list  # (name, canonical kind, numpy dtype), or ("list", name)


def _split_lines(data: bytes):
    """Header lines as (text_without_eol, start_offset, next_offset)."""
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyError("truncated header: no end_header", offset=pos)
        yield data[pos:nl].rstrip(b"\r"), pos, nl + 1
        pos = nl + 1


def _parse_header(data: bytes):
    """Returns (format, elements in declaration order, payload byte offset)."""
    lines = _split_lines(data)
    first, _, _ = next(lines)
    if first.strip() != b"ply":
        raise PlyError("not a PLY file", offset=0)
    fmt = None
    elements: list[_Element] = []
    for raw, off, nxt in lines:
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise PlyError("non-ascii bytes in header", offset=off)
        tokens = line.split()
        if not tokens:
            continue
        keyword = tokens[0]
        if keyword == "end_header":
            if fmt is None:
                raise PlyError("header has no format line", offset=off)
            return fmt, elements, nxt
        if keyword in ("comment", "obj_info"):
            continue
        if keyword == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise PlyError(f"unsupported format line: {line!r}", offset=off)
            if tokens[1] in (ASCII, BINARY_LE):
                fmt = tokens[1]
            else:
                raise PlyError(f"unsupported format: {tokens[1]}", offset=off)
        elif keyword == "element":
            if len(tokens) != 3:
                raise PlyError(f"malformed element line: {line!r}", offset=off)
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyError(f"malformed element count: {tokens[2]!r}", offset=off)
            if count < 0:
                raise PlyError("negative element count", offset=off)
            elements.append(_Element(tokens[1], count, []))
        elif keyword == "property":
            if not elements:
                raise PlyError("property before any element", offset=off)
            if len(tokens) >= 2 and tokens[1] == "list":
                if len(tokens) != 5:
                    raise PlyError(f"malformed list property: {line!r}", offset=off)
                elements[-1].properties.append(("list", tokens[4]))
            else:
                if len(tokens) != 3:
                    raise PlyError(f"malformed property line: {line!r}", offset=off)
                kind = _SCALAR_KINDS.get(tokens[1])
                if kind is None:
                    raise PlyError(f"unknown scalar kind {tokens[1]!r}", offset=off)
                elements[-1].properties.append((tokens[2], kind[0], kind[1]))
        else:
            raise PlyError(f"unknown header keyword {keyword!r}", offset=off)
    raise PlyError("truncated header: no end_header", offset=0)


def _vertex_layout(vertex: _Element, offset: int):
    """Validate the vertex properties; returns (names, row dtype, has_color)."""
    fields = []
    for prop in vertex.properties:
        if prop[0] == "list":
            raise PlyError(
                f"list-typed vertex property {prop[1]!r} is not supported",
                offset=offset,
            )
        name, kind, dt = prop
        if name in _COLOR_ALIASES:
            raise PlyError(
                f"unsupported property {name!r} (use {_COLOR_ALIASES[name]!r})",
                offset=offset,
            )
        fields.append((name, kind, dt))
    kinds = {name: kind for name, kind, _ in fields}
    for coord in ("x", "y", "z"):
        if coord not in kinds:
            raise PlyError(f"missing vertex property {coord!r}", offset=offset)
        if kinds[coord] not in ("float32", "float64"):
            raise PlyError(
                f"vertex property {coord!r} must be float32 or float64",
                offset=offset,
            )
    color_present = [c for c in ("red", "green", "blue") if c in kinds]
    if color_present and len(color_present) != 3:
        raise PlyError(
            "incomplete color properties (need red, green and blue)",
            offset=offset,
        )
    has_color = len(color_present) == 3
    if has_color:
        for c in ("red", "green", "blue"):
            if kinds[c] != "uint8":
                raise PlyError(f"color property {c!r} must be uint8", offset=offset)
    names = [name for name, _, _ in fields]
    dtype = np.dtype([(name, dt) for name, _, dt in fields])
    return names, dtype, has_color


def _read_header(data: bytes):
    fmt, elements, payload_offset = _parse_header(data)
    vertex = next((el for el in elements if el.name == "vertex"), None)
    if vertex is None:
        raise PlyError("no vertex element", offset=0)
    names, dtype, has_color = _vertex_layout(vertex, payload_offset)
    order = tuple((name, kind) for name, kind, _ in vertex.properties)
    header = PlyHeader(fmt, vertex.count, has_color, order)
    return header, elements, vertex, names, dtype, payload_offset


def read_header(data: bytes) -> PlyHeader:
    """Header summary only, without decoding the payload."""
    return _read_header(data)[0]


def _skip_ascii_rows(data: bytes, pos: int, rows: int) -> int:
    for _ in range(rows):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise PlyError("truncated payload", offset=pos)
        pos = nl + 1
    return pos


def _read_ascii_vertices(data: bytes, pos: int, count: int, names, dtype):
    rows = np.zeros(count, dtype=dtype)
    offsets = np.empty(count, dtype=np.int64)
    for i in range(count):
        offsets[i] = pos
        nl = data.find(b"\n", pos)
        line = data[pos:] if nl < 0 else data[pos:nl]
        tokens = line.split()
        if len(tokens) < len(names):
            raise PlyError("truncated payload", offset=pos)
        try:
            for name, tok in zip(names, tokens):
                rows[name][i] = float(tok)
        except (ValueError, OverflowError):
            raise PlyError(f"invalid coordinate at vertex {i}", offset=pos)
        if nl < 0 and i + 1 < count:
            raise PlyError("truncated payload", offset=pos)
        pos = len(data) if nl < 0 else nl + 1
    return rows, offsets


def read_ply(data: bytes) -> PointCloud:
    """Decode PLY bytes into a cloud; float32 coordinates widen to float64."""
    header, elements, vertex, names, dtype, pos = _read_header(data)
    row_offsets = None
    if header.format == ASCII:
        for el in elements:
            if el is vertex:
                break
            pos = _skip_ascii_rows(data, pos, el.count)
        rows, row_offsets = _read_ascii_vertices(data, pos, vertex.count, names, dtype)
    else:
        for el in elements:
            if el is vertex:
                break
            if any(p[0] == "list" for p in el.properties):
                raise PlyError(
                    f"cannot skip element {el.name!r} with list properties",
                    offset=pos,
                )
            pos += el.count * np.dtype([(p[0], p[2]) for p in el.properties]).itemsize
        row_size = dtype.itemsize
        if len(data) - pos < vertex.count * row_size:
            raise PlyError("truncated payload", offset=pos)
        rows = np.frombuffer(data, dtype=dtype, count=vertex.count, offset=pos)
        row_offsets = pos + row_size * np.arange(vertex.count, dtype=np.int64)

    points = np.empty((vertex.count, 3), dtype=np.float64)
    for j, coord in enumerate(("x", "y", "z")):
        col = rows[coord]
        if header.format == ASCII and dtype[coord] == np.dtype("<f4"):
            # ascii text was parsed as double; snap through float32 so ascii
            # and binary encodings of the same cloud decode identically
            col = col.astype(np.float32)
        points[:, j] = col.astype(np.float64)
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        raise PlyError(f"invalid coordinate at vertex {i}", offset=int(row_offsets[i]))
    colors = None
    if header.has_color:
        colors = np.stack([rows[c].astype(np.uint8) for c in ("red", "green", "blue")],
                          axis=1)
    return PointCloud(points, colors)


def _format_ascii_coord(value: float, kind: str) -> str:
    if kind == "f32":
        return np.format_float_positional(np.float32(value), unique=True, trim="0")
    return repr(float(value))


def write_ply(cloud: PointCloud, format: str = BINARY_LE,
              coordinate_kind: str = "f64") -> bytes:
    """Serialize a cloud to PLY bytes.

    format is "ascii" or "binary_little_endian"; coordinate_kind "f32" or
    "f64". Identical clouds always produce identical bytes, and float64
    ascii output uses shortest round-trip decimals, so nothing is lost in
    either encoding.
    """
    if format not in (ASCII, BINARY_LE):
        raise ValueError(f"unknown format {format!r}")
    if coordinate_kind not in ("f32", "f64"):
        raise ValueError(f"unknown coordinate kind {coordinate_kind!r}")
    coord_name = "float" if coordinate_kind == "f32" else "double"
    lines = ["ply", f"format {format} 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property {coord_name} {axis}" for axis in ("x", "y", "z")]
    if cloud.colors is not None:
        lines += [f"property uchar {c}" for c in ("red", "green", "blue")]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    if format == ASCII:
        out = []
        colors = cloud.colors
        for i, (x, y, z) in enumerate(cloud.points):
            row = " ".join(_format_ascii_coord(v, coordinate_kind) for v in (x, y, z))
            if colors is not None:
                r, g, b = colors[i]
                row += f" {r} {g} {b}"
            out.append(row)
        return header + ("\n".join(out) + ("\n" if out else "")).encode("ascii")

    coord_dt = "<f4" if coordinate_kind == "f32" else "<f8"
    fields = [("x", coord_dt), ("y", coord_dt), ("z", coord_dt)]
    if cloud.colors is not None:
        fields += [("red", "<u1"), ("green", "<u1"), ("blue", "<u1")]
    rows = np.empty(len(cloud), dtype=np.dtype(fields))
    for j, axis in enumerate(("x", "y", "z")):
        rows[axis] = cloud.points[:, j]
    if cloud.colors is not None:
        for j, c in enumerate(("red", "green", "blue")):
            rows[c] = cloud.colors[:, j]
    return header + rows.tobytes()


def load_ply(path) -> PointCloud:
    return read_ply(Path(path).read_bytes())


def save_ply(path, cloud: PointCloud, format: str = BINARY_LE,
             coordinate_kind: str = "f64") -> None:
    Path(path).write_bytes(write_ply(cloud, format, coordinate_kind))
