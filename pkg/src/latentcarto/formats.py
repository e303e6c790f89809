"""On-disk formats for fields and embeddings.

Field files (``.lcf``)::

    b"LCF1" | header_len: u32 little-endian | header: UTF-8 JSON | payload

The header holds ``kind`` ("meaning", "measure" or "transform"),
``shape``, ``bounds`` and, for meaning fields only, ``dist``. The payload
is ``prod(shape)`` little-endian float64 values in row-major order (axis 1
outermost, component axis innermost).

Embedding files are CSV with header ``z1,z2`` or ``z1,z2,label``;
coordinates use the shortest decimal form that parses back to the same
float64.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .cartogram import TransformField
from .errors import FormatError, InputError
from .grid import EmbeddingSet, GridSpec, MeaningField, MeasureField

MAGIC = b"LCF1"
_F8 = np.dtype("<f8")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_field(fld) -> bytes:
    if isinstance(fld, MeaningField):
        header = {"kind": "meaning", "shape": list(fld.values.shape)}
    elif isinstance(fld, MeasureField):
        header = {"kind": "measure", "shape": list(fld.values.shape)}
    elif isinstance(fld, TransformField):
        header = {"kind": "transform", "shape": list(fld.positions.shape)}
    else:
        raise InputError(f"cannot serialise {type(fld).__name__}")
    values = np.asarray(fld.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InputError("refusing to save a field with non-finite values")
    header["bounds"] = [list(b) for b in fld.spec.bounds]
    if isinstance(fld, MeaningField):
        header["dist"] = fld.is_distribution
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + values.astype(_F8).tobytes(order="C")


def save_field(path, fld) -> None:
    _atomic_write(path, encode_field(fld))


def decode_field(data: bytes):
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(data) < 8:
        raise FormatError("truncated header length", offset=len(data))
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data):
        raise FormatError(f"header of {hlen} bytes runs past end of file", offset=8)
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=8) from None
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=8)

    kind = header.get("kind")
    shape = header.get("shape")
    bounds = header.get("bounds")
    if kind not in ("meaning", "measure", "transform"):
        raise FormatError(f"unknown kind {kind!r}", offset=8)
    if not isinstance(shape, list) or not all(isinstance(s, int) and s > 0 for s in shape):
        raise FormatError(f"bad shape {shape!r}", offset=8)
    arity = {"meaning": 3, "measure": 2, "transform": 3}[kind]
    if len(shape) != arity or (kind == "transform" and shape[2] != 2):
        raise FormatError(f"shape {shape} does not match kind {kind!r}", offset=8)
    if "dist" in header and kind != "meaning":
        raise FormatError("'dist' is only valid for meaning fields", offset=8)
    try:
        (a1, b1), (a2, b2) = bounds
        spec = GridSpec(a1, b1, a2, b2, shape[0], shape[1])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad bounds {bounds!r}: {exc}", offset=8) from None

    start = 8 + hlen
    expected = math.prod(shape)
    nbytes = len(data) - start
    if nbytes != expected * 8:
        found = f"{nbytes // 8} values" if nbytes % 8 == 0 else f"{nbytes} bytes"
        raise FormatError(f"payload holds {found}, expected {expected} values", offset=start)
    values = np.frombuffer(data, dtype=_F8, offset=start).astype(np.float64).reshape(shape)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if len(bad):
        raise FormatError("non-finite value in payload", offset=start + 8 * int(bad[0]))

    try:
        if kind == "meaning":
            return MeaningField(spec, values, is_distribution=bool(header.get("dist", False)))
        if kind == "measure":
            return MeasureField(spec, values)
        return TransformField(spec, values)
    except InputError as exc:
        raise FormatError(str(exc), offset=start) from None


def load_field(path):
    return decode_field(Path(path).read_bytes())


# embeddings ------------------------------------------------------------------


def encode_embeddings(E: EmbeddingSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if E.has_labels:
        w.writerow(["z1", "z2", "label"])
        for (x, y), lbl in zip(E.points, E.labels):
            w.writerow([repr(float(x)), repr(float(y)), str(lbl)])
    else:
        w.writerow(["z1", "z2"])
        for x, y in E.points:
            w.writerow([repr(float(x)), repr(float(y))])
    return buf.getvalue()


def save_embeddings(path, E: EmbeddingSet) -> None:
    _atomic_write(path, encode_embeddings(E).encode("utf-8"))


def decode_embeddings(text: str) -> EmbeddingSet:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None:
        raise FormatError("empty file", line=1)
    header = [h.strip() for h in header]
    if header not in (["z1", "z2"], ["z1", "z2", "label"]):
        raise FormatError(f"bad header {','.join(header)!r}", line=1)
    width = len(header)
    pts = []
    labels = []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != width:
            raise FormatError(f"expected {width} columns, got {len(row)}", line=lineno)
        try:
            x, y = float(row[0]), float(row[1])
        except ValueError:
            raise FormatError(f"unparseable coordinate in {row[:2]}", line=lineno) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise FormatError("non-finite coordinate", line=lineno)
        pts.append((x, y))
        if width == 3:
            labels.append(row[2])
    if not pts:
        raise FormatError("embedding file contains no points", line=2)
    return EmbeddingSet(np.array(pts), tuple(labels) if width == 3 else None)


def load_embeddings(path) -> EmbeddingSet:
    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise FormatError(f"{path}: not UTF-8 text", line=line) from None
    return decode_embeddings(text)
