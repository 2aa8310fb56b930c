"""File formats: SSGT binary tensors, ASCII PLY clouds, JSON documents.

SSGT layout (little-endian)::

    b"SSGT" | uint32 version | uint32 dtype code | uint32 rank   (16 bytes)
    uint32 dims[rank]
    row-major payload
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import FormatError

SSGT_MAGIC = b"SSGT"
SSGT_VERSION = 1
DTYPE_CODES = {1: "<f4", 2: "<f8", 3: "<i4", 4: "<i8", 5: "|u1"}
_CODE_OF = {np.dtype(v).str: k for k, v in DTYPE_CODES.items()}


def write_ssgt(path, array, dtype="<f4"):
    arr = np.ascontiguousarray(np.asarray(array), dtype=np.dtype(dtype))
    code = _CODE_OF.get(arr.dtype.str)
    if code is None:
        raise FormatError(f"unsupported SSGT dtype {arr.dtype}")
    with open(path, "wb") as f:
        f.write(SSGT_MAGIC + struct.pack("<III", SSGT_VERSION, code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes(order="C"))


def read_ssgt(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:4] != SSGT_MAGIC:
            raise FormatError(f"{path}: not an SSGT file")
        version, code, rank = struct.unpack("<III", head[4:])
        if version != SSGT_VERSION:
            raise FormatError(f"{path}: unsupported SSGT version {version}")
        if code not in DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
        dt = np.dtype(DTYPE_CODES[code])
        data = f.read()
    count = int(np.prod(dims)) if rank else 1
    if len(data) != count * dt.itemsize:
        raise FormatError(f"{path}: payload size does not match header")
    return np.frombuffer(data, dtype=dt).reshape(dims).copy()


def write_ply(path, points, normals=None, extra=None):
    """ASCII PLY; float32 values are printed with enough digits to round-trip exactly."""
    pts = np.asarray(points, dtype=np.float32)
    cols = [pts]
    props = ["x", "y", "z"]
    if normals is not None:
        cols.append(np.asarray(normals, dtype=np.float32))
        props += ["nx", "ny", "nz"]
    for name, values in (extra or {}).items():
        cols.append(np.asarray(values, dtype=np.float32).reshape(-1, 1))
        props.append(name)
    data = np.concatenate(cols, axis=1)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(data)}"]
    lines += [f"property float {p}" for p in props]
    lines.append("end_header")
    body = [" ".join("%.9g" % v for v in row) for row in data]
    with open(path, "w") as f:
        f.write("\n".join(lines + body) + "\n")


def read_ply(path):
    """Read an ASCII PLY vertex list; returns ``{property: float32 column}``."""
    with open(path) as f:
        if f.readline().strip() != "ply":
            raise FormatError(f"{path}: not a PLY file")
        props, n = [], None
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "format" and tok[1] != "ascii":
                raise FormatError(f"{path}: only ASCII PLY is supported")
            if tok[0] == "element" and tok[1] == "vertex":
                n = int(tok[2])
            elif tok[0] == "property":
                props.append(tok[-1])
            elif tok[0] == "end_header":
                break
        if n is None:
            raise FormatError(f"{path}: missing vertex element")
        rows = [f.readline().split() for _ in range(n)]
    data = np.array(rows, dtype=np.float32).reshape(n, len(props))
    return {p: data[:, i] for i, p in enumerate(props)}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def hash_tree(root) -> str:
    """Hash of every file under ``root`` (relative path and content), in sorted order."""
    h = hashlib.sha256()
    for dirpath, dirnames, files in os.walk(root):
        dirnames.sort()
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            h.update(os.path.relpath(p, root).encode())
            h.update(sha256_file(p).encode())
    return h.hexdigest()
