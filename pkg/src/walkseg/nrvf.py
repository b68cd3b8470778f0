"""NRVF: the binary feature-bundle file format.

Layout (all integers unsigned 32-bit little-endian, all floats 32-bit
little-endian, row-major):

    offset  field
    0       magic  b"NRVF"
    4       version (currently 1)
    8       grid_h
    12      grid_w
    16      feature_dim d
    20      head_count
    24      class_count k
    28      label_mode  (1 = CROSS_ATTN, 2 = PROBS)
    32      class-name table: k entries of (u32 byte length, UTF-8 bytes)
    ...     head records, head_count of:
                u32 layer_index, u32 head_index,
                n*d floats Q, n*d floats K        (n = grid_h * grid_w)
    ...     label block:
                mode 1: n*d floats token queries, k*d floats prompt keys
                mode 2: n*k floats G
    end-4   CRC-32 (zlib polynomial) of every preceding byte

The loader validates magic and version first, then header plausibility,
then the checksum, and only then touches tensor bytes; nothing larger
than the file itself is ever allocated from header-declared sizes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .affinity import FeatureBundle, HeadFeatures
from .errors import (
    BadMagic,
    CorruptPayload,
    DimensionMismatch,
    InconsistentHeader,
    IoFailure,
    VersionUnsupported,
)

MAGIC = b"NRVF"
VERSION = 1
LABEL_CROSS_ATTN = 1
LABEL_PROBS = 2

_HEADER = struct.Struct("<4s7I")
_U32 = struct.Struct("<I")
_U32_MAX = 2**32 - 1


@dataclass(frozen=True)
class LabelInputs:
    """Label block of a bundle file: cross-attention inputs or a precomputed G."""

    mode: int
    class_names: tuple[str, ...]
    token_queries: np.ndarray | None = None
    prompt_keys: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.mode == LABEL_CROSS_ATTN:
            if self.token_queries is None or self.prompt_keys is None:
                raise DimensionMismatch("cross-attention labels need token queries and prompt keys")
        elif self.mode == LABEL_PROBS:
            if self.probs is None:
                raise DimensionMismatch("precomputed labels need a probability matrix")
        else:
            raise ValueError(f"unknown label mode {self.mode}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if count < 0 or self.pos + count > len(self.data):
            raise CorruptPayload(
                f"{what}: needs {count} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def f32_matrix(self, rows: int, cols: int, what: str) -> np.ndarray:
        raw = self.take(rows * cols * 4, what)
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)


def _f32_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def save_bundle(path, bundle: FeatureBundle, labels: LabelInputs) -> None:
    """Serialize a bundle and its label inputs; see the module docstring for layout."""
    n = bundle.n
    d = bundle.feature_dim
    k = len(labels.class_names)
    if k < 1:
        raise ValueError("at least one class name is required")
    if labels.mode == LABEL_CROSS_ATTN:
        tq = np.asarray(labels.token_queries)
        pk = np.asarray(labels.prompt_keys)
        if tq.shape != (n, d):
            raise DimensionMismatch(f"token queries {tq.shape}, expected ({n}, {d})")
        if pk.shape != (k, d):
            raise DimensionMismatch(f"prompt keys {pk.shape}, expected ({k}, {d})")
    else:
        pr = np.asarray(labels.probs)
        if pr.shape != (n, k):
            raise DimensionMismatch(f"label probabilities {pr.shape}, expected ({n}, {k})")
    for field in ("grid_h", "grid_w"):
        if getattr(bundle, field) > _U32_MAX:
            raise ValueError(f"{field} exceeds u32")
    buf = bytearray()
    buf += _HEADER.pack(
        MAGIC, VERSION, bundle.grid_h, bundle.grid_w, d, len(bundle.heads), k, labels.mode
    )
    for name in labels.class_names:
        nb = name.encode("utf-8")
        buf += _U32.pack(len(nb))
        buf += nb
    for head in bundle.heads:
        if not (0 <= head.layer_index <= _U32_MAX and 0 <= head.head_index <= _U32_MAX):
            raise ValueError("layer/head indices must fit in u32")
        buf += struct.pack("<II", head.layer_index, head.head_index)
        buf += _f32_bytes(head.queries)
        buf += _f32_bytes(head.keys)
    if labels.mode == LABEL_CROSS_ATTN:
        buf += _f32_bytes(labels.token_queries)
        buf += _f32_bytes(labels.prompt_keys)
    else:
        buf += _f32_bytes(labels.probs)
    buf += _U32.pack(zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    try:
        Path(path).write_bytes(bytes(buf))
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


def load_bundle(path) -> tuple[FeatureBundle, LabelInputs]:
    """Parse and validate an NRVF file.

    Raises BadMagic, VersionUnsupported, InconsistentHeader, or
    CorruptPayload, naming the offending field.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc
    if len(data) < _HEADER.size + 4:
        raise CorruptPayload(
            f"file is {len(data)} bytes, shorter than the fixed header plus checksum"
        )
    magic, version, grid_h, grid_w, d, head_count, k, label_mode = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic is {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionUnsupported(f"version {version}, reader supports {VERSION}")
    if grid_h < 2 or grid_w < 2:
        raise InconsistentHeader(f"grid_h/grid_w must be >= 2, got {grid_h}x{grid_w}")
    n = grid_h * grid_w  # python ints: no silent overflow
    if n > _U32_MAX:
        raise InconsistentHeader(f"grid_h*grid_w = {n} overflows 32 bits")
    if d < 1:
        raise InconsistentHeader("feature_dim must be >= 1")
    if head_count < 1:
        raise InconsistentHeader("head_count must be >= 1")
    if k < 1:
        raise InconsistentHeader("class_count must be >= 1")
    if label_mode not in (LABEL_CROSS_ATTN, LABEL_PROBS):
        raise InconsistentHeader(f"label_mode {label_mode} is not 1 or 2")
    label_floats = n * d + k * d if label_mode == LABEL_CROSS_ATTN else n * k
    minimum = (
        _HEADER.size
        + 4 * k                                  # empty class names still carry lengths
        + head_count * (8 + 2 * n * d * 4)
        + label_floats * 4
        + 4
    )
    if minimum > len(data):
        raise CorruptPayload(
            f"header declares at least {minimum} bytes, file has {len(data)}"
        )
    stored_crc = _U32.unpack_from(data, len(data) - 4)[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptPayload(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    r = _Reader(data[:-4])
    r.pos = _HEADER.size
    names = []
    for i in range(k):
        length = r.u32(f"class name {i} length")
        raw = r.take(length, f"class name {i}")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptPayload(f"class name {i} is not valid UTF-8") from exc
    heads = []
    for i in range(head_count):
        layer_index = r.u32(f"head {i} layer_index")
        head_index = r.u32(f"head {i} head_index")
        q = r.f32_matrix(n, d, f"head {i} queries")
        km = r.f32_matrix(n, d, f"head {i} keys")
        if not (np.isfinite(q).all() and np.isfinite(km).all()):
            raise CorruptPayload(f"head {i} contains non-finite values")
        heads.append(HeadFeatures(q, km, layer_index=layer_index, head_index=head_index))
    if label_mode == LABEL_CROSS_ATTN:
        tq = r.f32_matrix(n, d, "token queries")
        pk = r.f32_matrix(k, d, "prompt keys")
        if not (np.isfinite(tq).all() and np.isfinite(pk).all()):
            raise CorruptPayload("label block contains non-finite values")
        labels = LabelInputs(LABEL_CROSS_ATTN, tuple(names), token_queries=tq, prompt_keys=pk)
    else:
        pr = r.f32_matrix(n, k, "label probabilities")
        if not np.isfinite(pr).all():
            raise CorruptPayload("label block contains non-finite values")
        labels = LabelInputs(LABEL_PROBS, tuple(names), probs=pr)
    if r.pos != len(r.data):
        raise CorruptPayload(
            f"{len(r.data) - r.pos} unexpected trailing bytes before the checksum"
        )
    bundle = FeatureBundle(tuple(heads), grid_h, grid_w, d, source_tag="")
    return bundle, labels


PROBS_MAGIC = b"NRVP"


def save_probabilities(path, p: np.ndarray) -> None:
    """Write an n x k float block in the same style as the bundle format."""
    m = np.asarray(p)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected 2-d probabilities, got {m.shape}")
    buf = bytearray()
    buf += PROBS_MAGIC
    buf += _U32.pack(VERSION)
    buf += _U32.pack(m.shape[0])
    buf += _U32.pack(m.shape[1])
    buf += _f32_bytes(m)
    buf += _U32.pack(zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    try:
        Path(path).write_bytes(bytes(buf))
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


def load_probabilities(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc
    if len(data) < 20:
        raise CorruptPayload(f"file is {len(data)} bytes, shorter than header plus checksum")
    if data[:4] != PROBS_MAGIC:
        raise BadMagic(f"magic is {data[:4]!r}, expected {PROBS_MAGIC!r}")
    version, rows, cols = struct.unpack_from("<3I", data, 4)
    if version != VERSION:
        raise VersionUnsupported(f"version {version}, reader supports {VERSION}")
    expected = 16 + rows * cols * 4 + 4
    if expected != len(data):
        raise CorruptPayload(f"header declares {expected} bytes, file has {len(data)}")
    stored = _U32.unpack_from(data, len(data) - 4)[0]
    if stored != zlib.crc32(data[:-4]) & 0xFFFFFFFF:
        raise CorruptPayload("checksum mismatch")
    return np.frombuffer(data[16:-4], dtype="<f4").reshape(rows, cols).astype(np.float64)
