"""Snapshot tensors, sequence metadata, and the STF binary tensor format.

Everything downstream moves data through two currencies: float32 numpy
arrays (written to disk as ``.stf`` files) and :class:`SnapshotSequence`
objects described by a JSON :class:`SequenceManifest`.

STF layout: magic ``MDK1``, u32 little-endian rank, ``rank`` u64
little-endian extents, then the raw float32 little-endian payload in
row-major order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

STF_MAGIC = b"MDK1"

# Cap on total element count so a corrupt header cannot drive a huge
# allocation before the payload-size check runs.
MAX_STF_ELEMENTS = 2**40


class StfError(Exception):
    """Malformed or unwritable STF data."""


class BadMagicError(StfError):
    """File does not start with the STF magic bytes."""


class TruncatedPayloadError(StfError):
    """Header or payload ends before the declared size."""


class ExtentOverflowError(StfError):
    """Declared extents multiply out to an impossible payload size."""


def write_stf(t: np.ndarray, path: str | Path) -> None:
    """Write ``t`` as an STF file. Requires rank >= 1 and every extent >= 1."""
    arr = np.asarray(t, dtype="<f4")
    if arr.ndim < 1:
        raise StfError("rank-0 tensors are not representable (rank >= 1)")
    if any(e < 1 for e in arr.shape):
        raise StfError(f"every extent must be >= 1, got shape {arr.shape}")
    header = STF_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_stf(path: str | Path) -> np.ndarray:
    """Read an STF file back into a float32 array; inverse of :func:`write_stf`."""
    blob = Path(path).read_bytes()
    if blob[:4] != STF_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise TruncatedPayloadError(f"{path}: header cut short")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank < 1:
        raise StfError(f"{path}: rank must be >= 1, got {rank}")
    offset = 8 + 8 * rank
    if len(blob) < offset:
        raise TruncatedPayloadError(f"{path}: extent list cut short")
    dims = struct.unpack_from(f"<{rank}Q", blob, 8)
    if any(e < 1 for e in dims):
        raise StfError(f"{path}: zero extent in {dims}")
    count = 1
    for e in dims:
        count *= e
        if count > MAX_STF_ELEMENTS:
            raise ExtentOverflowError(f"{path}: extents {dims} overflow")
    expected = offset + 4 * count
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(blob) - offset} bytes, need {4 * count}"
        )
    if len(blob) > expected:
        raise StfError(f"{path}: {len(blob) - expected} trailing bytes")
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return flat.reshape(dims).astype(np.float32, copy=True)


@dataclass
class SnapshotSequence:
    """A labelled stack of frames with uniform time spacing.

    ``frames`` has shape [K, H, W] (float32). ``validity`` marks frames that
    belong to the sequence; ``roi`` is an (x0, y0, width, height) crop box.
    Instances are treated as immutable: operations return new sequences.
    """

    frames: np.ndarray
    dt: float
    sequence_id: str
    label: Optional[str] = None
    validity: Optional[np.ndarray] = None
    roi: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be [K, H, W], got shape {self.frames.shape}")
        k = self.frames.shape[0]
        if k < 1:
            raise ValueError("need at least one frame")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.validity is None:
            self.validity = np.ones(k, dtype=bool)
        else:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != (k,):
                raise ValueError("validity length must equal the frame count")
        if self.roi is not None:
            x0, y0, w, h = (int(v) for v in self.roi)
            _, ny, nx = self.frames.shape
            if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > nx or y0 + h > ny:
                raise ValueError(f"roi {self.roi} outside frame bounds {ny}x{nx}")
            self.roi = (x0, y0, w, h)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def with_frames(self, frames: np.ndarray, **changes) -> "SnapshotSequence":
        """Copy of this sequence with replaced frames (validity resets to all-valid)."""
        changes.setdefault("validity", None)
        return replace(self, frames=np.asarray(frames, dtype=np.float32), **changes)


def reshape_to_snapshot_matrix(s: SnapshotSequence) -> np.ndarray:
    """Stack the sequence into an [N_p, K] matrix; column k is frame k flattened row-major."""
    k = s.num_frames
    return np.ascontiguousarray(s.frames.reshape(k, -1).T)


def snapshot_matrix_to_frames(m: np.ndarray, frame_shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`reshape_to_snapshot_matrix`: [N_p, K] back to [K, H, W]."""
    h, w = frame_shape
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != h * w:
        raise ValueError(f"matrix shape {m.shape} does not match frame shape {frame_shape}")
    return np.ascontiguousarray(m.T.reshape(m.shape[1], h, w))


def validity_to_rle(mask: np.ndarray) -> list[list]:
    """Run-length encode a boolean mask as [[value, count], ...]."""
    mask = np.asarray(mask, dtype=bool)
    runs: list[list] = []
    for v in mask:
        v = bool(v)
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs


def rle_to_validity(rle: Sequence[Sequence], length: Optional[int] = None) -> np.ndarray:
    """Decode [[value, count], ...] back to a boolean mask."""
    parts = [np.full(int(n), bool(v), dtype=bool) for v, n in rle]
    mask = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
    if length is not None and mask.size != length:
        raise ValueError(f"RLE decodes to {mask.size} entries, expected {length}")
    return mask


@dataclass
class ManifestEntry:
    sequence_id: str
    path: str
    label: Optional[str]
    dt: float
    split: Optional[str] = None
    roi: Optional[tuple[int, int, int, int]] = None
    validity_rle: Optional[list[list]] = None
    d: Optional[int] = None  # per-sequence delay-index override

    def to_json_obj(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "path": self.path,
            "label": self.label,
            "dt": self.dt,
            "split": self.split,
            "roi": list(self.roi) if self.roi is not None else None,
            "validity_rle": self.validity_rle,
            "d": self.d,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ManifestEntry":
        roi = obj.get("roi")
        return cls(
            sequence_id=obj["sequence_id"],
            path=obj["path"],
            label=obj.get("label"),
            dt=float(obj["dt"]),
            split=obj.get("split"),
            roi=tuple(int(v) for v in roi) if roi is not None else None,
            validity_rle=obj.get("validity_rle"),
            d=obj.get("d"),
        )


@dataclass
class SequenceManifest:
    """Index of sequences on disk; the JSON document every CLI command consumes."""

    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [e.sequence_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate sequence_ids in manifest: {dupes}")

    def save(self, path: str | Path) -> None:
        doc = {"entries": [e.to_json_obj() for e in self.entries]}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path, check_files: bool = True) -> "SequenceManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        manifest = cls([ManifestEntry.from_json_obj(o) for o in doc["entries"]])
        if check_files:
            for e in manifest.entries:
                f = path.parent / e.path
                if not f.exists():
                    raise FileNotFoundError(f"manifest references missing file: {f}")
        return manifest


def load_sequence(entry: ManifestEntry, base_dir: str | Path) -> SnapshotSequence:
    """Materialize a manifest entry as a :class:`SnapshotSequence`."""
    frames = read_stf(Path(base_dir) / entry.path)
    if frames.ndim != 3:
        raise StfError(f"{entry.path}: expected a rank-3 frame stack, got rank {frames.ndim}")
    validity = None
    if entry.validity_rle is not None:
        validity = rle_to_validity(entry.validity_rle, frames.shape[0])
    return SnapshotSequence(
        frames=frames,
        dt=entry.dt,
        sequence_id=entry.sequence_id,
        label=entry.label,
        validity=validity,
        roi=entry.roi,
    )
