"""Binary file formats and JSON helpers.

All integers little-endian. Formats:

* ``CMPT`` checkpoint: magic, version u32, then per-parameter records
  (name length u16, name bytes, rank u8, dims u32 each, f64 payload)
  until EOF. Round-trips bit-exactly.
* ``CMPK`` training checkpoint: magic, version u32, two length-prefixed
  (u64) CMPT blocks (model params, optimizer moments), then u32-length
  JSON metadata (step counter, config echo, RNG states).
* ``CMPS`` scene: magic, version u32, N u32, K u32, N*3 f32 coords,
  N u32 instance labels.
* ``CMPM`` mask: magic, version u32, N u32, N f32 values in [0, 1].
* ``CMPE`` external embeddings: magic, version u32, rows u32, D u32,
  f32 payload.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

VERSION = 1


class FormatError(ValueError):
    """Malformed or mismatched binary file."""


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected EOF (wanted {n} bytes, got {len(buf)})")
    return buf


def _expect_magic(fh, magic: bytes):
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


# ---------------------------------------------------------------------------
# CMPT parameter checkpoints


def write_tensors(path, tensors: "OrderedDict[str, np.ndarray]"):
    with open(path, "wb") as fh:
        fh.write(_tensors_bytes(tensors))


def _tensors_bytes(tensors) -> bytes:
    out = [b"CMPT", struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        # np.asarray keeps rank-0 tensors rank 0 (ascontiguousarray would
        # promote them to rank 1)
        arr = np.asarray(arr, dtype=np.float64, order="C")
        nameb = name.encode("utf-8")
        if len(nameb) > 0xFFFF:
            raise FormatError(f"parameter name too long: {name!r}")
        out.append(struct.pack("<H", len(nameb)))
        out.append(nameb)
        out.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            out.append(struct.pack("<I", dim))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def read_tensors(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        data = fh.read()
    return _tensors_from_bytes(data)


def _tensors_from_bytes(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:4] != b"CMPT":
        raise FormatError(f"bad magic {data[:4]!r}, expected b'CMPT'")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    ofs = 8
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    total = len(data)
    while ofs < total:
        (nlen,) = struct.unpack_from("<H", data, ofs)
        ofs += 2
        name = data[ofs:ofs + nlen].decode("utf-8")
        ofs += nlen
        (rank,) = struct.unpack_from("<B", data, ofs)
        ofs += 1
        dims = struct.unpack_from(f"<{rank}I", data, ofs) if rank else ()
        ofs += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=ofs).reshape(dims)
        ofs += 8 * count
        tensors[name] = arr.astype(np.float64).reshape(dims).copy()
    return tensors


# ---------------------------------------------------------------------------
# CMPK training checkpoints


def write_train_checkpoint(path, model_tensors, opt_tensors, meta: dict):
    model_blob = _tensors_bytes(model_tensors)
    opt_blob = _tensors_bytes(opt_tensors)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(b"CMPK")
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(model_blob)))
        fh.write(model_blob)
        fh.write(struct.pack("<Q", len(opt_blob)))
        fh.write(opt_blob)
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)


def read_train_checkpoint(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, b"CMPK")
        (mlen,) = struct.unpack("<Q", _read_exact(fh, 8))
        model = _tensors_from_bytes(_read_exact(fh, mlen))
        (olen,) = struct.unpack("<Q", _read_exact(fh, 8))
        opt = _tensors_from_bytes(_read_exact(fh, olen))
        (jlen,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, jlen).decode("utf-8"))
    return model, opt, meta


def read_any_checkpoint(path):
    """Load either a CMPK training checkpoint or a bare CMPT parameter file.

    Returns (model_tensors, meta_or_None).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"CMPK":
        model, _, meta = read_train_checkpoint(path)
        return model, meta
    if magic == b"CMPT":
        return read_tensors(path), None
    raise FormatError(f"unrecognized checkpoint magic {magic!r}")


# ---------------------------------------------------------------------------
# CMPS scenes / CMPM masks / CMPE embeddings


def write_scene(path, points: np.ndarray, labels: np.ndarray, k: int):
    points = np.ascontiguousarray(points, dtype="<f4")
    labels = np.ascontiguousarray(labels, dtype="<u4")
    if points.ndim != 2 or points.shape[1] != 3:
        raise FormatError(f"scene points must be (N, 3), got {points.shape}")
    if labels.shape != (points.shape[0],):
        raise FormatError("labels length must match point count")
    with open(path, "wb") as fh:
        fh.write(b"CMPS")
        fh.write(struct.pack("<III", VERSION, points.shape[0], k))
        fh.write(points.tobytes(order="C"))
        fh.write(labels.tobytes(order="C"))


def read_scene(path):
    with open(path, "rb") as fh:
        _expect_magic(fh, b"CMPS")
        n, k = struct.unpack("<II", _read_exact(fh, 8))
        points = np.frombuffer(_read_exact(fh, 12 * n), dtype="<f4").reshape(n, 3)
        labels = np.frombuffer(_read_exact(fh, 4 * n), dtype="<u4")
    return points.copy(), labels.astype(np.int64), k


def write_mask(path, values: np.ndarray):
    values = np.ascontiguousarray(values, dtype="<f4").reshape(-1)
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise FormatError("mask values must lie in [0, 1]")
    with open(path, "wb") as fh:
        fh.write(b"CMPM")
        fh.write(struct.pack("<II", VERSION, values.size))
        fh.write(values.tobytes(order="C"))


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"CMPM")
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        values = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4")
    return values.astype(np.float64)


def write_embeddings(path, feats: np.ndarray):
    feats = np.ascontiguousarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise FormatError("embeddings must be 2-D")
    with open(path, "wb") as fh:
        fh.write(b"CMPE")
        fh.write(struct.pack("<III", VERSION, feats.shape[0], feats.shape[1]))
        fh.write(feats.tobytes(order="C"))


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _expect_magic(fh, b"CMPE")
        rows, d = struct.unpack("<II", _read_exact(fh, 8))
        feats = np.frombuffer(_read_exact(fh, 4 * rows * d), dtype="<f4").reshape(rows, d)
    return feats.astype(np.float64)


def dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
