"""Synthetic oscillating sequences with analytic ground truth.

Sequences are sums of damped spatial oscillators plus Gaussian noise, so
decomposition results can be checked against known frequencies and growth
rates. ``make_toy_classes`` builds a small labelled dataset whose classes
differ both in spatial pattern and in frequency content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from modalvit.tensor_core import (
    ManifestEntry,
    SequenceManifest,
    SnapshotSequence,
    write_stf,
)


@dataclass
class Tone:
    """One oscillating component: amplitude * pattern * e^(delta t) * cos(omega t + phase)."""

    pattern: np.ndarray  # [H, W] spatial shape
    omega: float  # angular frequency, rad/s
    delta: float = 0.0  # growth rate, 1/s
    phase: float = 0.0
    amplitude: float = 1.0


def make_oscillator(
    shape: tuple[int, int],
    tones: Sequence[Tone],
    num_frames: int,
    dt: float,
    noise_scale: float = 0.0,
    seed: int = 0,
    sequence_id: str = "osc",
    label: Optional[str] = None,
) -> SnapshotSequence:
    """Generate a sequence whose frame k is the tone sum at t = k*dt plus noise."""
    h, w = shape
    rng = np.random.default_rng(seed)
    t = np.arange(num_frames, dtype=np.float64) * dt
    frames = np.zeros((num_frames, h, w), dtype=np.float64)
    for tone in tones:
        pat = np.asarray(tone.pattern, dtype=np.float64)
        if pat.shape != (h, w):
            raise ValueError(f"pattern shape {pat.shape} does not match frames {shape}")
        envelope = tone.amplitude * np.exp(tone.delta * t) * np.cos(tone.omega * t + tone.phase)
        frames += envelope[:, None, None] * pat[None, :, :]
    if noise_scale > 0.0:
        frames += noise_scale * rng.standard_normal(frames.shape)
    return SnapshotSequence(
        frames=frames.astype(np.float32),
        dt=dt,
        sequence_id=sequence_id,
        label=label,
    )


def _gaussian_blob(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def _class_pattern(class_idx: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct spatial signature per class, with mild per-sequence jitter."""
    jy = rng.uniform(-0.06, 0.06) * h
    jx = rng.uniform(-0.06, 0.06) * w
    sigma = (0.12 + rng.uniform(-0.02, 0.02)) * min(h, w)
    if class_idx % 4 == 0:
        return _gaussian_blob(h, w, h / 2 + jy, w / 2 + jx, sigma)
    if class_idx % 4 == 1:
        a = _gaussian_blob(h, w, h / 4 + jy, w / 4 + jx, sigma * 0.8)
        b = _gaussian_blob(h, w, 3 * h / 4 + jy, 3 * w / 4 + jx, sigma * 0.8)
        return a + b
    if class_idx % 4 == 2:
        xx = np.arange(w, dtype=np.float64)
        stripes = 0.5 * (1.0 + np.sin(2.0 * np.pi * (xx + jx) / (w / 3.0)))
        window = _gaussian_blob(h, w, h / 2 + jy, w / 2 + jx, 0.35 * min(h, w))
        return stripes[None, :] * window
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.sqrt((yy - h / 2 - jy) ** 2 + (xx - w / 2 - jx) ** 2)
    return np.exp(-((r - 0.3 * min(h, w)) ** 2) / (2.0 * (0.08 * min(h, w)) ** 2))


def class_base_frequency(class_idx: int) -> float:
    """Angular frequency (rad/s) that characterizes a class."""
    return 2.0 * np.pi * (2.0 + 3.0 * class_idx)


def make_toy_classes(
    out_dir: str | Path,
    num_classes: int = 4,
    sequences_per_class: int = 5,
    num_frames: int = 60,
    dt: float = 0.01,
    noise_scale: float = 0.3,
    image_size: int = 32,
    seed: int = 0,
) -> Path:
    """Write a labelled toy dataset (STF files + manifest + ground truth JSON).

    Returns the manifest path. Classes are separable both by spatial pattern
    and by dominant temporal frequency.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = w = image_size
    entries: list[ManifestEntry] = []
    truths: dict[str, dict] = {}
    for c in range(num_classes):
        for i in range(sequences_per_class):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(c, i))
            )
            sid = f"class{c}_seq{i:02d}"
            omega = class_base_frequency(c) * rng.uniform(0.95, 1.05)
            pattern = _class_pattern(c, h, w, rng)
            tones = [
                Tone(
                    pattern=pattern,
                    omega=omega,
                    delta=0.0,
                    phase=rng.uniform(0.0, 2.0 * np.pi),
                    amplitude=rng.uniform(0.8, 1.2),
                ),
                # static floor keeps frames non-negative-ish and rank > 1
                Tone(pattern=0.3 * np.ones((h, w)), omega=0.0, phase=0.0, amplitude=1.0),
            ]
            seq = make_oscillator(
                (h, w),
                tones,
                num_frames,
                dt,
                noise_scale=noise_scale,
                seed=int(rng.integers(0, 2**31)),
                sequence_id=sid,
                label=f"class{c}",
            )
            fname = f"{sid}.stf"
            write_stf(seq.frames, out_dir / fname)
            entries.append(
                ManifestEntry(sequence_id=sid, path=fname, label=f"class{c}", dt=dt)
            )
            truths[sid] = {"omega": float(omega), "delta": 0.0, "label": f"class{c}"}
    manifest = SequenceManifest(entries)
    manifest_path = out_dir / "manifest.json"
    manifest.save(manifest_path)
    (out_dir / "ground_truth.json").write_text(json.dumps(truths, indent=2, sort_keys=True))
    return manifest_path
