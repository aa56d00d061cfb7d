"""Binary interchange formats (FKEY keys, FMOD models, FTNS datasets) and
CSV import for 2-D toy data.

Every binary file is magic + version + payload + CRC-32 (IEEE polynomial,
little-endian u32) over all preceding bytes. Writers are deterministic:
identical objects produce identical bytes.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from typing import Optional

import numpy as np

from .errors import CorruptFileError, InvalidArgumentError, ShapeMismatchError
from .flow import ActNorm, AffineCoupling, FlowModel, InvertibleLinear
from .linalg import OrthogonalKey, orthogonality_error

KEY_MAGIC = b"FKEY"
MODEL_MAGIC = b"FMOD"
DATASET_MAGIC = b"FTNS"
FORMAT_VERSION = 1

# Loaded keys must satisfy ||A A^T - I||_F < this, else the file is rejected.
KEY_LOAD_ORTHO_TOL = 1e-8

_LAYER_TAGS = {ActNorm: 1, InvertibleLinear: 2, AffineCoupling: 3}


def _f64_bytes(arr: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
    return struct.pack("<I", flat.size) + flat.tobytes()


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError(f"{self.path}: truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64_array(self) -> np.ndarray:
        n = self.u32()
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(float)

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _check_crc(data: bytes, magic: bytes, path: str) -> bytes:
    if len(data) < len(magic) + 4:
        raise CorruptFileError(f"{path}: file too short")
    if data[: len(magic)] != magic:
        raise CorruptFileError(f"{path}: bad magic, expected {magic!r}")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{path}: CRC-32 mismatch")
    return body


def _frame(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


# ---------------------------------------------------------------------------
# FKEY
# ---------------------------------------------------------------------------

def key_to_bytes(key: OrthogonalKey) -> bytes:
    body = KEY_MAGIC + struct.pack("<HI", FORMAT_VERSION, key.dim)
    body += np.ascontiguousarray(key.matrix, dtype="<f8").tobytes()
    return _frame(body)


def save_key(key: OrthogonalKey, path) -> None:
    with open(path, "wb") as fh:
        fh.write(key_to_bytes(key))


def load_key(path) -> OrthogonalKey:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_crc(data, KEY_MAGIC, str(path))
    r = _Reader(body, str(path))
    r.take(4)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported key version {version}")
    dim = r.u32()
    raw = r.take(8 * dim * dim)
    matrix = np.frombuffer(raw, dtype="<f8").astype(float).reshape(dim, dim)
    if orthogonality_error(matrix) >= KEY_LOAD_ORTHO_TOL:
        raise CorruptFileError(f"{path}: stored matrix is not orthogonal")
    return OrthogonalKey(dim=dim, matrix=matrix, seed=None)


# ---------------------------------------------------------------------------
# FMOD
# ---------------------------------------------------------------------------

def _layer_payload(layer) -> bytes:
    if isinstance(layer, ActNorm):
        arrays = [layer.scale, layer.bias, np.array([1.0 if layer.initialized else 0.0])]
    elif isinstance(layer, InvertibleLinear):
        arrays = [
            layer.perm.astype(float),
            layer.sign,
            layer.lower[np.tril_indices(layer.dim, k=-1)],
            layer.upper[np.triu_indices(layer.dim, k=1)],
            layer.log_diag,
        ]
    elif isinstance(layer, AffineCoupling):
        arrays = [layer.mask.astype(float), layer.w1, layer.b1, layer.w2, layer.b2]
    else:
        raise InvalidArgumentError(f"unknown layer type {type(layer).__name__}")
    return bytes([_LAYER_TAGS[type(layer)]]) + b"".join(_f64_bytes(a) for a in arrays)


def model_to_bytes(model: FlowModel) -> bytes:
    body = MODEL_MAGIC + struct.pack(
        "<HII", FORMAT_VERSION, model.dim, len(model.layers)
    )
    body += b"".join(_layer_payload(layer) for layer in model.layers)
    return _frame(body)


def save_model(model: FlowModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def _read_layer(r: _Reader, dim: int):
    tag = r.u8()
    if tag == 1:
        scale = r.f64_array()
        bias = r.f64_array()
        flag = r.f64_array()
        return ActNorm(dim, scale=scale, bias=bias, initialized=bool(flag[0]))
    if tag == 2:
        perm = r.f64_array().astype(np.int64)
        sign = r.f64_array()
        lower_flat = r.f64_array()
        upper_flat = r.f64_array()
        log_diag = r.f64_array()
        lower = np.zeros((dim, dim))
        lower[np.tril_indices(dim, k=-1)] = lower_flat
        upper = np.zeros((dim, dim))
        upper[np.triu_indices(dim, k=1)] = upper_flat
        return InvertibleLinear(dim, perm, sign, lower, upper, log_diag)
    if tag == 3:
        mask = r.f64_array().astype(bool)
        k = int(mask.sum())
        w1 = r.f64_array()
        b1 = r.f64_array()
        w2 = r.f64_array()
        b2 = r.f64_array()
        hidden = b1.shape[0]
        out = b2.shape[0]
        return AffineCoupling(
            dim, mask, w1.reshape(hidden, k), b1, w2.reshape(out, hidden), b2
        )
    raise CorruptFileError(f"{r.path}: unknown layer tag {tag}")


def load_model(path) -> FlowModel:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_crc(data, MODEL_MAGIC, str(path))
    r = _Reader(body, str(path))
    r.take(4)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported model version {version}")
    dim = r.u32()
    n_layers = r.u32()
    layers = [_read_layer(r, dim) for _ in range(n_layers)]
    return FlowModel(dim, layers)


def fingerprint(model: FlowModel, key: OrthogonalKey) -> str:
    """SHA-256 over the serialized model + key bytes; stable across
    save/load round trips."""
    h = hashlib.sha256()
    h.update(model_to_bytes(model))
    h.update(key_to_bytes(key))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# FTNS
# ---------------------------------------------------------------------------

def dataset_to_bytes(samples: np.ndarray, labels: Optional[np.ndarray] = None) -> bytes:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim not in (1, 2):
        raise InvalidArgumentError("dataset rank must be 1 or 2")
    body = DATASET_MAGIC + struct.pack("<HB", FORMAT_VERSION, arr.ndim)
    for d in arr.shape:
        body += struct.pack("<I", d)
    body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    if labels is not None:
        lab = np.asarray(labels)
        if arr.ndim != 2 or lab.shape != (arr.shape[0],):
            raise ShapeMismatchError("labels must be one per row of rank-2 data")
        body += struct.pack("<I", lab.size)
        body += np.ascontiguousarray(lab, dtype="<u4").tobytes()
    return _frame(body)


def save_dataset(samples, path, labels=None) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_to_bytes(samples, labels))


def load_dataset(path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    body = _check_crc(data, DATASET_MAGIC, str(path))
    r = _Reader(body, str(path))
    r.take(4)
    version = r.u16()
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported dataset version {version}")
    rank = r.u8()
    shape = tuple(r.u32() for _ in range(rank))
    count = int(np.prod(shape)) if shape else 0
    payload = np.frombuffer(r.take(8 * count), dtype="<f8").astype(float).reshape(shape)
    labels = None
    if r.remaining() > 0:
        n = r.u32()
        if r.remaining() != 4 * n:
            raise CorruptFileError(f"{path}: malformed label block")
        labels = np.frombuffer(r.take(4 * n), dtype="<u4").astype(np.int64)
        if rank != 2 or n != shape[0]:
            raise CorruptFileError(f"{path}: label count does not match rows")
    return payload, labels


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def load_csv(path, labeled: Optional[bool] = None) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """One sample per row; optional trailing integer label column.

    labeled=None auto-detects: the last column is treated as labels when it
    is integer-valued, nonnegative, and there are at least two columns.
    """
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if arr.size == 0:
        raise InvalidArgumentError(f"{path}: empty CSV")
    if labeled is None:
        last = arr[:, -1]
        labeled = (
            arr.shape[1] >= 2
            and np.all(last >= 0)
            and np.all(last == np.round(last))
        )
    if labeled:
        if arr.shape[1] < 2:
            raise InvalidArgumentError(f"{path}: labeled CSV needs >= 2 columns")
        return arr[:, :-1], arr[:, -1].astype(np.int64)
    return arr, None


def save_csv(samples, path, labels=None) -> None:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgumentError("CSV export requires rank-2 data")
    if labels is not None:
        arr = np.column_stack([arr, np.asarray(labels, dtype=float)])
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")
