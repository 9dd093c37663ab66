"""Sequence homogenization: ROI cropping, validity splitting, resizing,
intensity normalization, and rendering of complex modes as images."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from modalvit.hodmd import DmdMode
from modalvit.tensor_core import SnapshotSequence


def crop_roi(s: SnapshotSequence) -> SnapshotSequence:
    """Crop every frame to the sequence ROI box; the result carries no ROI."""
    if s.roi is None:
        raise ValueError(f"{s.sequence_id}: no roi to crop")
    x0, y0, w, h = s.roi
    frames = s.frames[:, y0 : y0 + h, x0 : x0 + w]
    return replace(s, frames=np.ascontiguousarray(frames), roi=None, validity=s.validity.copy())


def split_on_validity(s: SnapshotSequence) -> list[SnapshotSequence]:
    """Break the sequence into maximal runs of consecutive valid frames.

    Each run becomes an independent all-valid sequence with the same dt,
    id-suffixed by its run index; original run order is preserved.
    """
    runs: list[tuple[int, int]] = []
    start = None
    for i, ok in enumerate(s.validity):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, s.num_frames))
    out = []
    for idx, (a, b) in enumerate(runs):
        out.append(
            replace(
                s,
                frames=np.ascontiguousarray(s.frames[a:b]),
                validity=None,
                sequence_id=f"{s.sequence_id}_{idx}",
            )
        )
    return out


def _axis_coords(src_len: int, dst_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned source coordinates: floor index, neighbour index, fraction."""
    pos = np.linspace(0.0, src_len - 1.0, dst_len)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    return lo, hi, pos - lo


def resize_image(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of one [H, W] image with corner-aligned sampling."""
    h, w = target
    if h < 2 or w < 2:
        raise ValueError(f"target must be at least 2x2, got {target}")
    img = np.asarray(img, dtype=np.float64)
    y0, y1, wy = _axis_coords(img.shape[0], h)
    x0, x1, wx = _axis_coords(img.shape[1], w)
    rows = img[y0, :] * (1.0 - wy)[:, None] + img[y1, :] * wy[:, None]
    out = rows[:, x0] * (1.0 - wx)[None, :] + rows[:, x1] * wx[None, :]
    return out


def resize_bilinear(s: SnapshotSequence, target: tuple[int, int]) -> SnapshotSequence:
    """Bilinear resize of every frame to (H, W)."""
    h, w = target
    if h < 2 or w < 2:
        raise ValueError(f"target must be at least 2x2, got {target}")
    frames = np.asarray(s.frames, dtype=np.float64)
    y0, y1, wy = _axis_coords(frames.shape[1], h)
    x0, x1, wx = _axis_coords(frames.shape[2], w)
    rows = frames[:, y0, :] * (1.0 - wy)[None, :, None] + frames[:, y1, :] * wy[None, :, None]
    out = rows[:, :, x0] * (1.0 - wx)[None, None, :] + rows[:, :, x1] * wx[None, None, :]
    return replace(
        s, frames=out.astype(np.float32), roi=None, validity=s.validity.copy()
    )


def normalize01(arr: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; constant input maps to all zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi <= lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def normalize_intensity(s: SnapshotSequence) -> SnapshotSequence:
    """Per-sequence min-max scaling of all frames jointly to [0, 1]."""
    return replace(
        s,
        frames=normalize01(s.frames).astype(np.float32),
        validity=s.validity.copy(),
    )


def render_mode_image(m: DmdMode, shape: tuple[int, int]) -> np.ndarray:
    """Magnitude image of a complex mode, min-max scaled to [0, 1]."""
    ny, nx = shape
    mag = np.abs(m.spatial_shape).reshape(ny, nx)
    return normalize01(mag).astype(np.float32)


def hflip(img: np.ndarray) -> np.ndarray:
    """Horizontal mirror."""
    return np.ascontiguousarray(img[:, ::-1])


def warp_rotate_zoom(img: np.ndarray, angle_deg: float, zoom: float) -> np.ndarray:
    """Rotate about the centre (CCW positive) and zoom; bilinear, zero-padded."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    # inverse map: undo zoom, then undo rotation
    src_y = cy + (cos_t * dy + sin_t * dx) / zoom
    src_x = cx + (-sin_t * dy + cos_t * dx) / zoom
    inside = (src_y >= 0) & (src_y <= h - 1) & (src_x >= 0) & (src_x <= w - 1)
    sy = np.clip(src_y, 0, h - 1)
    sx = np.clip(src_x, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy, fx = sy - y0, sx - x0
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y1, x0] * fy * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x1] * fy * fx
    )
    return np.where(inside, out, 0.0)
