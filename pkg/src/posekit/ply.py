"""Vertex reader for ASCII and binary little-endian PLY meshes.

Only ``x, y, z`` of the ``vertex`` element are returned; every other element
and property is parsed just far enough to be skipped.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(fh):
    first = fh.readline().strip()
    if first != b"ply":
        raise PlyError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop, dtype, list_count_dtype or None)])
    while True:
        line = fh.readline()
        if not line:
            raise PlyError("unexpected end of header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if tok[1] == "list":
                elements[-1][2].append((tok[4], PLY_TYPES[tok[3]], PLY_TYPES[tok[2]]))
            else:
                elements[-1][2].append((tok[2], PLY_TYPES[tok[1]], None))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_binary_element(fh, count, props):
    if all(lc is None for _, _, lc in props):
        dtype = np.dtype([(name, "<" + t) for name, t, _ in props])
        data = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
        return data
    rows = []
    for _ in range(count):
        row = {}
        for name, t, lc in props:
            if lc is None:
                dt = np.dtype("<" + t)
                row[name] = np.frombuffer(fh.read(dt.itemsize), dtype=dt)[0]
            else:
                ct = np.dtype("<" + lc)
                n = int(np.frombuffer(fh.read(ct.itemsize), dtype=ct)[0])
                dt = np.dtype("<" + t)
                row[name] = np.frombuffer(fh.read(dt.itemsize * n), dtype=dt)
        rows.append(row)
    return rows


def read_ply_vertices(path) -> np.ndarray:
    """Return the ``(n, 3)`` float64 vertex positions of a PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        for name, count, props in elements:
            if fmt == "ascii":
                if name == "vertex":
                    names = [p[0] for p in props]
                    if any(lc is not None for _, _, lc in props):
                        raise PlyError("list properties on vertices are not supported")
                    idx = [names.index(c) for c in "xyz"]
                    rows = [fh.readline().split() for _ in range(count)]
                    return np.array([[float(r[i]) for i in idx] for r in rows], dtype=float)
                for _ in range(count):
                    fh.readline()
            else:
                data = _read_binary_element(fh, count, props)
                if name == "vertex":
                    if isinstance(data, list):
                        return np.array([[float(r[c]) for c in "xyz"] for r in data])
                    return np.column_stack([np.asarray(data[c], dtype=float) for c in "xyz"])
    raise PlyError(f"{path}: no vertex element")


def write_ply_vertices(path, points, binary: bool = False) -> None:
    points = np.asarray(points, dtype=float)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(Path(path), "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(points.astype("<f4").tobytes())
        else:
            for p in points:
                fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n".encode("ascii"))
