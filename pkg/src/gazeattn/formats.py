"""Binary containers: ``GZDS`` datasets and ``GZAT`` model checkpoints.

All integers and floats are little-endian. Loaders parse the whole file
before returning anything; every failure raises :class:`FormatError`
carrying the byte offset where parsing stopped.

GZDS v1::

    b"GZDS" | version u32 | n_seq u32
    per sequence: name_len u32 | name utf-8 | T u32 | K u32 | D u32
                  | labels u32[T] | features f64[T*K*K*D] (row-major)

GZAT v1::

    b"GZAT" | version u32
    | K u32 | D u32 | H u32 | num_layers u32 | dropout_rate f64 | context u32
    | n_params u32
    per parameter: name_len u32 | name utf-8 | rows u64 | cols u64 | f64[rows*cols]

Vectors are stored with ``cols = 1``.
"""

import os
import struct
import tempfile

import numpy as np

from .data import LabeledSequence
from .model import CONTEXT_MODES, ModelConfig, ModelParams

DATASET_MAGIC = b"GZDS"
CHECKPOINT_MAGIC = b"GZAT"
VERSION = 1

_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def u32(self, what):
        return self.unpack("<I", what)[0]

    def u64(self, what):
        return self.unpack("<Q", what)[0]

    def f64(self, what):
        return self.unpack("<d", what)[0]

    def array(self, dtype, count, what):
        raw = self.take(count * dtype.itemsize, what)
        return np.frombuffer(raw, dtype=dtype).copy()

    def name(self, what):
        n = self.u32(f"{what} length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid utf-8", start) from None

    def header(self, magic):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        version = self.u32("version")
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def _atomic_write(path, payload):
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _name_bytes(name):
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps_dataset(sequences):
    parts = [DATASET_MAGIC, struct.pack("<II", VERSION, len(sequences))]
    for seq in sequences:
        T = len(seq)
        parts.append(_name_bytes(seq.name))
        parts.append(struct.pack("<III", T, seq.grid, seq.depth))
        parts.append(seq.labels.astype(_U32).tobytes())
        parts.append(seq.features.astype(_F64).tobytes())
    return b"".join(parts)


def loads_dataset(buf):
    r = _Reader(buf)
    r.header(DATASET_MAGIC)
    count = r.u32("sequence count")
    out = []
    for s in range(count):
        name = r.name(f"sequence {s} name")
        T, K, D = r.unpack("<III", f"sequence {s} shape")
        if K < 1 or D < 1:
            raise FormatError(f"sequence {s}: K={K}, D={D} must be >= 1", r.pos - 8)
        label_pos = r.pos
        labels = r.array(_U32, T, f"sequence {s} labels").astype(np.int64)
        bad = np.flatnonzero(labels >= K * K)
        if bad.size:
            t = int(bad[0])
            raise FormatError(
                f"sequence {s} frame {t}: label {labels[t]} outside [0, {K * K})", label_pos + 4 * t
            )
        feat_pos = r.pos
        feats = r.array(_F64, T * K * K * D, f"sequence {s} features")
        nonfinite = np.flatnonzero(~np.isfinite(feats))
        if nonfinite.size:
            i = int(nonfinite[0])
            raise FormatError(f"sequence {s}: non-finite feature in frame {i // (K * K * D)}", feat_pos + 8 * i)
        out.append(LabeledSequence(name, feats.reshape(T, K * K, D), labels))
    r.finish()
    return out


def save_dataset(sequences, path):
    _atomic_write(path, dumps_dataset(sequences))


def load_dataset(path):
    with open(path, "rb") as fh:
        return loads_dataset(fh.read())


def dumps_checkpoint(params):
    cfg = params.config
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<IIIIdI", cfg.grid, cfg.depth, cfg.hidden, cfg.num_layers,
                    cfg.dropout_rate, CONTEXT_MODES.index(cfg.context)),
        struct.pack("<I", len(params.tensors)),
    ]
    for name, arr in params:
        rows, cols = (arr.shape[0], 1) if arr.ndim == 1 else arr.shape
        parts.append(_name_bytes(name))
        parts.append(struct.pack("<QQ", rows, cols))
        parts.append(arr.astype(_F64).tobytes())
    return b"".join(parts)


def loads_checkpoint(buf):
    r = _Reader(buf)
    r.header(CHECKPOINT_MAGIC)
    cfg_pos = r.pos
    K, D, H, layers, rate, ctx = r.unpack("<IIIIdI", "config block")
    if ctx >= len(CONTEXT_MODES):
        raise FormatError(f"unknown context mode {ctx}", cfg_pos + 24)
    try:
        cfg = ModelConfig(grid=K, depth=D, hidden=H, num_layers=layers,
                          dropout_rate=rate, context=CONTEXT_MODES[ctx])
    except ValueError as exc:
        raise FormatError(f"invalid config: {exc}", cfg_pos) from None
    shapes = cfg.param_shapes()
    count_pos = r.pos
    count = r.u32("parameter count")
    if count != len(shapes):
        raise FormatError(f"{count} parameters, config implies {len(shapes)}", count_pos)
    tensors = {}
    for expected, shape in shapes.items():
        pos = r.pos
        name = r.name("parameter name")
        if name != expected:
            raise FormatError(f"parameter {name!r} where {expected!r} was expected", pos)
        rows, cols = r.unpack("<QQ", f"{name} shape")
        want = (shape[0], 1) if len(shape) == 1 else shape
        if (rows, cols) != want:
            raise FormatError(f"{name}: shape {(rows, cols)} != {want}", r.pos - 16)
        arr = r.array(_F64, rows * cols, f"{name} values").reshape(shape)
        tensors[name] = arr
    r.finish()
    return ModelParams(cfg, tensors)


def save_checkpoint(params, path):
    _atomic_write(path, dumps_checkpoint(params))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
