"""Binary parameter checkpoints and the architecture document stored beside them.

Layout (little-endian): ``GMAEP1``, u64 parameter count, then per parameter a
u64 byte length and UTF-8 id, u64 rows, u64 cols and rows*cols f64 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatchError, FormatError
from .graph import atomic_write_bytes

MAGIC = b"GMAEP1"


def encode_parameters(params) -> bytes:
    parts = [MAGIC, struct.pack("<Q", len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        rows, cols = p.data.shape
        parts.append(struct.pack("<Q", len(name)))
        parts.append(name)
        parts.append(struct.pack("<QQ", rows, cols))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_parameters(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(k):
        nonlocal pos
        if pos + k > len(view):
            raise FormatError(f"checkpoint truncated at byte {pos} (needed {k} more)")
        chunk = view[pos:pos + k]
        pos += k
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)")
    (count,) = struct.unpack("<Q", take(8))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<Q", take(8))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter id is not valid UTF-8") from None
        rows, cols = struct.unpack("<QQ", take(16))
        data = np.frombuffer(bytes(take(8 * rows * cols)), dtype="<f8").reshape(rows, cols)
        if name in out:
            raise FormatError(f"duplicate parameter id {name!r}")
        out[name] = data.astype(np.float64)
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after the last parameter")
    return out


def assign_parameters(params, values: dict[str, np.ndarray]):
    """Copy checkpoint values into ``params``; ids and shapes must match one to one."""
    expected = {p.name: p for p in params}
    missing = sorted(set(expected) - set(values))
    extra = sorted(set(values) - set(expected))
    if missing or extra:
        raise ArchitectureMismatchError(
            f"checkpoint does not match architecture: missing {missing[:5]}, unexpected {extra[:5]}"
        )
    for name, p in expected.items():
        if values[name].shape != p.data.shape:
            raise ArchitectureMismatchError(
                f"{name}: checkpoint shape {values[name].shape} != architecture shape {p.data.shape}"
            )
    for name, p in expected.items():
        p.data = values[name].copy()


def save_checkpoint(model, path, architecture_path=None):
    """Write the parameter file and (optionally) the architecture JSON, atomically."""
    atomic_write_bytes(path, encode_parameters(model.parameters()))
    if architecture_path is not None:
        doc = json.dumps(model.architecture(), indent=2, sort_keys=True) + "\n"
        atomic_write_bytes(architecture_path, doc.encode("utf-8"))


def load_checkpoint(path, architecture):
    """Rebuild a model from an architecture (dict or JSON path) and fill its weights."""
    from .training import GraphMAE

    if not isinstance(architecture, dict):
        architecture = json.loads(Path(architecture).read_text(encoding="utf-8"))
    model = GraphMAE.from_architecture(architecture)
    assign_parameters(model.parameters(), decode_parameters(Path(path).read_bytes()))
    return model
