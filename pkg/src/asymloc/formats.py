"""Binary file formats: ALOC checkpoints, ALFT feature files, map manifests.

Checkpoint layout (little-endian throughout):
    magic "ALOC" | version u32 | metadata u32 length + UTF-8 key=value lines |
    tensor count u32 | per tensor: name (u16 length + UTF-8), rank u8,
    dims (u32 each), dtype tag u8 (0 = f32), raw payload.

Feature file layout:
    magic "ALFT" | version u32 | width u32 | height u32 | N u32 | D u32 |
    positions N x 2 f32 (x, y) | confidences N f32 | descriptors N x D f32.

Map manifest: one tab-separated line per image: id, relative feature-file
path, width, height.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptionError, FormatError

CHECKPOINT_MAGIC = b"ALOC"
FEATURE_MAGIC = b"ALFT"
CHECKPOINT_VERSION = 1
FEATURE_VERSION = 1
_DTYPE_F32 = 0


def _encode_metadata(metadata: dict[str, str]) -> bytes:
    lines = []
    for key, value in metadata.items():
        key = str(key)
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value:
            raise FormatError(f"metadata key/value not encodable: {key!r}")
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode("utf-8")


def _decode_metadata(blob: bytes) -> dict[str, str]:
    text = blob.decode("utf-8")
    metadata = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CorruptionError(f"malformed metadata line: {line!r}")
        key, value = line.split("=", 1)
        metadata[key] = value
    return metadata


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CorruptionError(f"truncated file: {self.path}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def write_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict[str, str]):
    """Serialize named f32 arrays plus a metadata block."""
    path = Path(path)
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    meta = _encode_metadata(metadata)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            parts.append(struct.pack("<I", d))
        parts.append(struct.pack("<B", _DTYPE_F32))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint file (bad magic): {path}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    metadata = _decode_metadata(r.take(r.u32()))
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        tag = r.u8()
        if tag != _DTYPE_F32:
            raise FormatError(f"unsupported dtype tag {tag} for tensor {name!r}")
        n = int(np.prod(dims)) if dims else 1
        raw = r.take(4 * n)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    if r.off != len(r.blob):
        raise CorruptionError(f"trailing bytes in checkpoint: {path}")
    return tensors, metadata


def write_features(path, width: int, height: int, positions: np.ndarray,
                   confidences: np.ndarray, descriptors: np.ndarray):
    """Serialize one image's extracted keypoints to an ALFT file."""
    path = Path(path)
    positions = np.ascontiguousarray(positions, dtype="<f4").reshape(-1, 2)
    confidences = np.ascontiguousarray(confidences, dtype="<f4").reshape(-1)
    descriptors = np.ascontiguousarray(descriptors, dtype="<f4")
    n = positions.shape[0]
    if confidences.shape[0] != n or descriptors.shape[0] != n:
        raise CorruptionError("positions/confidences/descriptors length mismatch")
    d = descriptors.shape[1] if descriptors.ndim == 2 else 0
    parts = [
        FEATURE_MAGIC,
        struct.pack("<IIIII", FEATURE_VERSION, width, height, n, d),
        positions.tobytes(),
        confidences.tobytes(),
        descriptors.tobytes(),
    ]
    path.write_bytes(b"".join(parts))


def read_features(path) -> tuple[int, int, np.ndarray, np.ndarray, np.ndarray]:
    """Read an ALFT file -> (width, height, positions, confidences, descriptors)."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != FEATURE_MAGIC:
        raise FormatError(f"not a feature file (bad magic): {path}")
    version = r.u32()
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}, expected {FEATURE_VERSION}")
    width, height, n, d = r.u32(), r.u32(), r.u32(), r.u32()
    positions = np.frombuffer(r.take(8 * n), dtype="<f4").reshape(n, 2).copy()
    confidences = np.frombuffer(r.take(4 * n), dtype="<f4").copy()
    descriptors = np.frombuffer(r.take(4 * n * d), dtype="<f4").reshape(n, d).copy()
    if r.off != len(r.blob):
        raise CorruptionError(f"trailing bytes in feature file: {path}")
    return width, height, positions, confidences, descriptors


def write_manifest(path, entries: list[tuple[str, str, int, int]]):
    """Map manifest: (image id, relative feature path, width, height) per line."""
    lines = [f"{i}\t{p}\t{w}\t{h}" for i, p, w, h in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path) -> list[tuple[str, str, int, int]]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise CorruptionError(f"malformed manifest line: {line!r}")
        entries.append((fields[0], fields[1], int(fields[2]), int(fields[3])))
    return entries
