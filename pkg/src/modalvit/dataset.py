"""Training-set assembly: the 12 source-combination cases, sequence-level
splits, and balanced (optionally augmented) batch generation.

A *registry* maps sequence_id -> sample kind -> list of [H, W] images. The
six kinds are the decomposition products each sequence can contribute. A
kind key that maps to an empty list means the product legitimately does not
exist for that sequence (e.g. too short to decompose); a missing key is an
error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from modalvit.preprocess import hflip, resize_image, warp_rotate_zoom
from modalvit.tensor_core import SequenceManifest, read_stf, write_stf

KINDS = (
    "original",
    "svd_recon",
    "svd_mode",
    "hodmd_recon",
    "hodmd_mode",
    "svd_of_hodmd_mode_recon",
)

# Which sample kinds each training case combines.
CASE_TABLE: dict[int, frozenset[str]] = {
    1: frozenset({"original"}),
    2: frozenset({"svd_recon"}),
    3: frozenset({"original", "svd_recon", "svd_mode"}),
    4: frozenset({"original", "svd_recon"}),
    5: frozenset({"svd_recon", "svd_mode"}),
    6: frozenset({"hodmd_recon"}),
    7: frozenset({"hodmd_recon", "hodmd_mode"}),
    8: frozenset({"svd_recon", "hodmd_recon"}),
    9: frozenset({"original", "svd_recon", "hodmd_recon"}),
    10: frozenset({"hodmd_recon", "hodmd_mode", "svd_of_hodmd_mode_recon"}),
    11: frozenset({"svd_recon", "svd_mode", "hodmd_recon", "hodmd_mode"}),
    12: frozenset(
        {"svd_recon", "svd_mode", "hodmd_recon", "hodmd_mode", "svd_of_hodmd_mode_recon"}
    ),
}

SPLITS = ("train", "val", "test")

ROTATION_RANGE_DEG = 15.0
ZOOM_RANGE = 0.10


@dataclass
class SampleRecord:
    image: np.ndarray  # [H, W] float32
    label: int
    source_kind: str
    sequence_id: str

    def __post_init__(self) -> None:
        if self.source_kind not in KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")
        self.image = np.asarray(self.image, dtype=np.float32)


def assemble_case(
    case_id: int,
    registry: dict[str, dict[str, list[np.ndarray]]],
    labels: dict[str, int],
    sequence_ids: Optional[Sequence[str]] = None,
) -> list[SampleRecord]:
    """Collect the samples a training case draws from the registry.

    ``sequence_ids`` restricts assembly (e.g. to the train split); defaults
    to every registry entry, in sorted order for determinism.
    """
    if case_id not in CASE_TABLE:
        raise ValueError(f"case must be 1..12, got {case_id}")
    wanted = CASE_TABLE[case_id]
    sids = sorted(registry) if sequence_ids is None else list(sequence_ids)
    samples: list[SampleRecord] = []
    for sid in sids:
        per_kind = registry[sid]
        for kind in KINDS:
            if kind not in wanted:
                continue
            if kind not in per_kind:
                raise ValueError(f"registry entry {sid!r} is missing kind {kind!r}")
            for img in per_kind[kind]:
                samples.append(
                    SampleRecord(image=img, label=labels[sid], source_kind=kind, sequence_id=sid)
                )
    return samples


@dataclass
class SplitPlan:
    """Per-sequence split assignment; samples always follow their sequence."""

    assignment: dict[str, str]
    fractions: tuple[float, float, float]

    def ids_for(self, split: str) -> list[str]:
        return sorted(sid for sid, s in self.assignment.items() if s == split)


def split_sequences(
    manifest: SequenceManifest | dict[str, str],
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> SplitPlan:
    """Assign whole sequences to train/val/test, balanced per class.

    Per class, the split counts are the largest-remainder rounding of
    n * fractions, adjusted so every split receives at least one sequence.
    Requires at least 3 sequences per class.
    """
    if isinstance(manifest, SequenceManifest):
        by_label: dict[str, list[str]] = {}
        for e in manifest.entries:
            by_label.setdefault(str(e.label), []).append(e.sequence_id)
    else:
        by_label = {}
        for sid, label in manifest.items():
            by_label.setdefault(str(label), []).append(sid)
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions}")

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for label in sorted(by_label):
        ids = sorted(by_label[label])
        n = len(ids)
        if n < 3:
            raise ValueError(f"class {label!r} has only {n} sequences; need >= 3")
        rng.shuffle(ids)
        targets = [n * f for f in fractions]
        counts = [math.floor(t) for t in targets]
        remainders = [t - c for t, c in zip(targets, counts)]
        for _ in range(n - sum(counts)):
            i = int(np.argmax(remainders))
            counts[i] += 1
            remainders[i] = -1.0
        # every split must see every class
        while min(counts) == 0:
            counts[int(np.argmin(counts))] += 1
            counts[int(np.argmax(counts))] -= 1
        pos = 0
        for split, c in zip(SPLITS, counts):
            for sid in ids[pos : pos + c]:
                assignment[sid] = split
            pos += c
    return SplitPlan(assignment=assignment, fractions=tuple(fractions))


def _augment_image(
    img: np.ndarray, rng: np.random.Generator, target_size: Optional[int]
) -> np.ndarray:
    if target_size is not None and img.shape != (target_size, target_size):
        img = resize_image(img, (target_size, target_size))
    if rng.random() < 0.5:
        img = hflip(np.asarray(img))
    angle = rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG)
    zoom = 1.0 + rng.uniform(-ZOOM_RANGE, ZOOM_RANGE)
    return warp_rotate_zoom(img, angle, zoom)


def make_batches(
    samples: Sequence[SampleRecord],
    batch_size: int = 64,
    min_class_fraction: float = 0.15,
    seed: int = 0,
    augment: bool = False,
    target_size: Optional[int] = None,
    num_batches: Optional[int] = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images [B, H, W] float32, labels [B] int64) batches.

    Every full batch carries at least ceil(min_class_fraction * batch_size)
    samples of each class. Batch b is a pure function of (samples, seed, b),
    so streams are reproducible and resumable at any index. When ``augment``
    is set, each image independently gets resize-to-target, horizontal flip
    (p=0.5), rotation (+/-15 deg), and zoom (+/-10%).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to batch")
    classes = sorted({s.label for s in samples})
    if min_class_fraction * len(classes) > 1.0 + 1e-12:
        raise ValueError(
            f"min_class_fraction {min_class_fraction} x {len(classes)} classes exceeds 1"
        )
    quota = math.ceil(min_class_fraction * batch_size)
    by_class = {c: [i for i, s in enumerate(samples) if s.label == c] for c in classes}
    if num_batches is None:
        num_batches = math.ceil(len(samples) / batch_size)

    for b in range(num_batches):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))
        chosen: list[int] = []
        if quota > 0:
            for c in classes:
                pool = by_class[c]
                chosen.extend(
                    rng.choice(pool, size=quota, replace=len(pool) < quota).tolist()
                )
        fill = batch_size - len(chosen)
        if fill > 0:
            taken = set(chosen)
            remaining = [i for i in range(len(samples)) if i not in taken]
            if len(remaining) >= fill:
                chosen.extend(rng.choice(remaining, size=fill, replace=False).tolist())
            else:
                chosen.extend(rng.choice(len(samples), size=fill, replace=True).tolist())
        order = rng.permutation(len(chosen))
        idx = [chosen[i] for i in order]
        images = []
        for i in idx:
            img = samples[i].image
            if augment:
                img = _augment_image(img, rng, target_size)
            elif target_size is not None and img.shape != (target_size, target_size):
                img = resize_image(img, (target_size, target_size))
            images.append(np.asarray(img, dtype=np.float32))
        yield np.stack(images), np.array([samples[i].label for i in idx], dtype=np.int64)


# ---------------------------------------------------------------------------
# On-disk registry of decomposition products (written by the decompose step)
# ---------------------------------------------------------------------------


def save_registry(
    out_dir: str | Path,
    products: dict[str, dict[str, list[np.ndarray]]],
    labels: dict[str, str],
) -> Path:
    """Write per-kind STF stacks plus ``registry.json``; returns the index path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index: dict = {"sequences": {}}
    for sid in sorted(products):
        kinds_entry: dict[str, list[str]] = {}
        for kind in KINDS:
            images = products[sid].get(kind, [])
            if images:
                fname = f"{sid}_{kind}.stf"
                stack = np.stack([np.asarray(im, dtype=np.float32) for im in images])
                tmp = out_dir / (fname + ".tmp")
                write_stf(stack, tmp)
                tmp.replace(out_dir / fname)
                kinds_entry[kind] = [fname]
            else:
                kinds_entry[kind] = []
        index["sequences"][sid] = {"label": labels[sid], "kinds": kinds_entry}
    path = out_dir / "registry.json"
    tmp = out_dir / "registry.json.tmp"
    tmp.write_text(json.dumps(index, indent=2, sort_keys=True))
    tmp.replace(path)
    return path


def load_registry(
    reg_dir: str | Path,
) -> tuple[dict[str, dict[str, list[np.ndarray]]], dict[str, str]]:
    """Read a registry directory back into memory."""
    reg_dir = Path(reg_dir)
    index = json.loads((reg_dir / "registry.json").read_text())
    products: dict[str, dict[str, list[np.ndarray]]] = {}
    labels: dict[str, str] = {}
    for sid, entry in index["sequences"].items():
        labels[sid] = entry["label"]
        per_kind: dict[str, list[np.ndarray]] = {}
        for kind, files in entry["kinds"].items():
            images: list[np.ndarray] = []
            for fname in files:
                stack = read_stf(reg_dir / fname)
                images.extend(stack[i] for i in range(stack.shape[0]))
            per_kind[kind] = images
        products[sid] = per_kind
    return products, labels


# ---------------------------------------------------------------------------
# Materialized training sets (written by the build-dataset step)
# ---------------------------------------------------------------------------


@dataclass
class BuiltDataset:
    """A materialized case: per-split images with labels, kinds, and sequence ids."""

    classes: list[str]
    splits: dict[str, list[SampleRecord]] = field(default_factory=dict)

    def samples(self, split: str, kind: Optional[str] = None) -> list[SampleRecord]:
        records = self.splits.get(split, [])
        if kind is None:
            return records
        return [r for r in records if r.source_kind == kind]


def save_built_dataset(out_dir: str | Path, ds: BuiltDataset) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index: dict = {"classes": ds.classes, "splits": {}}
    for split, records in ds.splits.items():
        if records:
            stack = np.stack([r.image for r in records])
            fname = f"{split}_images.stf"
            write_stf(stack, out_dir / fname)
        else:
            fname = None
        index["splits"][split] = {
            "images": fname,
            "labels": [r.label for r in records],
            "kinds": [r.source_kind for r in records],
            "sequence_ids": [r.sequence_id for r in records],
        }
    path = out_dir / "index.json"
    path.write_text(json.dumps(index, indent=2, sort_keys=True))
    return path


def load_built_dataset(ds_dir: str | Path) -> BuiltDataset:
    ds_dir = Path(ds_dir)
    index = json.loads((ds_dir / "index.json").read_text())
    ds = BuiltDataset(classes=list(index["classes"]))
    for split, entry in index["splits"].items():
        records: list[SampleRecord] = []
        if entry["images"] is not None:
            stack = read_stf(ds_dir / entry["images"])
            for i in range(stack.shape[0]):
                records.append(
                    SampleRecord(
                        image=stack[i],
                        label=int(entry["labels"][i]),
                        source_kind=entry["kinds"][i],
                        sequence_id=entry["sequence_ids"][i],
                    )
                )
        ds.splits[split] = records
    return ds
