"""Per-image prediction, per-sequence fusion, metrics, and phase timing.

Fusion collapses the per-image score vectors of one sequence into a single
per-class score (mean or max), takes the argmax, and falls back to an
undetermined verdict (``None``) when no class reaches the confidence
threshold. Undetermined verdicts count as incorrect everywhere.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from modalvit.decomp import hosvd, svd_reconstruct, truncated_svd
from modalvit.hodmd import DmdModeSet, dmd_d, hodmd_reconstruct, lift_modes
from modalvit.preprocess import normalize_intensity, resize_image
from modalvit.tensor_core import (
    SnapshotSequence,
    reshape_to_snapshot_matrix,
    snapshot_matrix_to_frames,
)
from modalvit.vit import VitConfig, forward

FUSION_RULES = ("average", "maximum")

TIMING_PHASES = ("svd", "hosvd", "hodmd", "pred")


@dataclass
class PredictionRecord:
    """Scores and fused verdict for one sequence. ``verdict`` is a class
    index, or None for undetermined."""

    sequence_id: str
    scores: np.ndarray  # [n_images, C], each row sums to 1
    fused: np.ndarray  # [C]
    verdict: Optional[int]
    fusion_rule: str
    threshold: float

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.fused = np.asarray(self.fused, dtype=np.float64)
        sums = self.scores.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError(f"{self.sequence_id}: score rows must sum to 1")


def fuse(
    scores: Sequence[np.ndarray] | np.ndarray,
    rule: str = "average",
    threshold: float = 0.0,
    sequence_id: str = "",
) -> PredictionRecord:
    """Fuse per-image score vectors into one verdict.

    ``rule`` is 'average' (per-class mean) or 'maximum' (per-class max);
    ties break to the lowest class index.
    """
    scores = np.asarray(list(scores), dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError("need at least one score vector")
    if rule == "average":
        fused = scores.mean(axis=0)
    elif rule == "maximum":
        fused = scores.max(axis=0)
    else:
        raise ValueError(f"unknown fusion rule {rule!r}")
    best = int(np.argmax(fused))
    verdict = best if fused[best] >= threshold else None
    return PredictionRecord(
        sequence_id=sequence_id,
        scores=scores,
        fused=fused,
        verdict=verdict,
        fusion_rule=rule,
        threshold=threshold,
    )


def f1_score(tp: int, fp: int, fn: int) -> float:
    """TP / (TP + (FP + FN) / 2); zero when the denominator vanishes."""
    denom = tp + 0.5 * (fp + fn)
    if denom == 0:
        return 0.0
    return tp / denom


@dataclass
class MetricsReport:
    class_names: list[str]
    tp: list[int]
    fp: list[int]
    fn: list[int]
    f1_per_class: list[float]
    per_image_acc_wo: float
    per_image_acc_w: float
    per_sequence_acc: float
    num_images: int
    num_sequences: int
    timings_ms: Optional[dict[str, float]] = None


def evaluate(
    records: Sequence[PredictionRecord],
    labels: dict[str, int],
    class_names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """Score fused predictions against per-sequence labels.

    Per-image (w/o) counts each image by its own argmax; per-image (w/)
    assigns every image its sequence's fused verdict; per-sequence counts
    fused verdicts. Per-class F1 tallies are per-image (w/o).
    """
    if not records:
        raise ValueError("no predictions to evaluate")
    num_classes = records[0].scores.shape[1]
    names = list(class_names) if class_names is not None else [str(c) for c in range(num_classes)]
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    img_wo = img_w = seq_ok = 0
    n_img = 0
    for rec in records:
        label = labels[rec.sequence_id]
        preds = np.argmax(rec.scores, axis=1)
        for p in preds:
            n_img += 1
            if int(p) == label:
                img_wo += 1
                tp[label] += 1
            else:
                fp[int(p)] += 1
                fn[label] += 1
        if rec.verdict is not None and rec.verdict == label:
            seq_ok += 1
            img_w += rec.scores.shape[0]
    return MetricsReport(
        class_names=names,
        tp=tp,
        fp=fp,
        fn=fn,
        f1_per_class=[f1_score(tp[c], fp[c], fn[c]) for c in range(num_classes)],
        per_image_acc_wo=img_wo / n_img,
        per_image_acc_w=img_w / n_img,
        per_sequence_acc=seq_ok / len(records),
        num_images=n_img,
        num_sequences=len(records),
    )


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "classes": [
            {
                "name": report.class_names[c],
                "tp": report.tp[c],
                "fp": report.fp[c],
                "fn": report.fn[c],
                "f1": report.f1_per_class[c],
            }
            for c in range(len(report.class_names))
        ],
        "per_image_accuracy_wo": report.per_image_acc_wo,
        "per_image_accuracy_w": report.per_image_acc_w,
        "per_sequence_accuracy": report.per_sequence_acc,
        "num_images": report.num_images,
        "num_sequences": report.num_sequences,
        "timings_ms": report.timings_ms,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def report_to_csv(report: MetricsReport) -> str:
    """Rows of (kind, name, value); see README for the schema."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["kind", "name", "value"])
    for c, name in enumerate(report.class_names):
        writer.writerow(["f1", name, report.f1_per_class[c]])
    writer.writerow(["accuracy", "per_image_wo", report.per_image_acc_wo])
    writer.writerow(["accuracy", "per_image_w", report.per_image_acc_w])
    writer.writerow(["accuracy", "per_sequence", report.per_sequence_acc])
    writer.writerow(["count", "images", report.num_images])
    writer.writerow(["count", "sequences", report.num_sequences])
    if report.timings_ms:
        for phase in sorted(report.timings_ms):
            writer.writerow(["timing_ms", phase, report.timings_ms[phase]])
    return buf.getvalue()


def predict_sequence(
    frames: np.ndarray,
    params: dict,
    vit_cfg: VitConfig,
    rule: str = "average",
    threshold: float = 0.0,
    sequence_id: str = "",
) -> PredictionRecord:
    """Eval-mode per-frame scores for a [K, H, W] stack, fused into one verdict."""
    scores = []
    for k in range(frames.shape[0]):
        img = frames[k]
        if img.shape != (vit_cfg.image_size, vit_cfg.image_size):
            img = resize_image(img, (vit_cfg.image_size, vit_cfg.image_size))
        scores.append(forward(img, params, vit_cfg, train_mode=False))
    return fuse(scores, rule=rule, threshold=threshold, sequence_id=sequence_id)


def timed_pipeline(
    s: SnapshotSequence,
    params: dict,
    vit_cfg: VitConfig,
    svd_modes: int = 5,
    d: Optional[int] = None,
    eps_svd: float = 5e-4,
    eps_dmd: float = 5e-4,
    rule: str = "average",
    threshold: float = 0.0,
) -> tuple[PredictionRecord, dict[str, float]]:
    """One single-pass decomposition + prediction run with wall-clock phase
    timing. Returns per-image averages (milliseconds) for the SVD, HOSVD
    reduction, delay-embedded decomposition, and network prediction phases.
    """
    seq = normalize_intensity(s)
    k = seq.num_frames
    if d is None:
        d = max(1, k // 3)

    t0 = time.perf_counter()
    matrix = reshape_to_snapshot_matrix(seq)
    svd = truncated_svd(matrix, rank=min(svd_modes, min(matrix.shape)))
    svd_frames = snapshot_matrix_to_frames(svd_reconstruct(svd), seq.frame_shape)
    t1 = time.perf_counter()

    hr = hosvd(svd_frames, eps_svd)
    reduced = hr.core.reshape(k, -1).T
    t2 = time.perf_counter()

    ms_red = dmd_d(reduced, d, seq.dt, eps_dmd, eps_svd=eps_svd)
    lifted = lift_modes(ms_red, hr.factors[0], hr.factors[1], hr.retained)
    mode_set = DmdModeSet(
        modes=lifted,
        dt=seq.dt,
        d=d,
        retained_counts=[hr.retained],
        frame_shape=seq.frame_shape,
    )
    recon = hodmd_reconstruct(mode_set, range(k))
    t3 = time.perf_counter()

    record = predict_sequence(
        recon.astype(np.float32),
        params,
        vit_cfg,
        rule=rule,
        threshold=threshold,
        sequence_id=s.sequence_id,
    )
    t4 = time.perf_counter()

    scale = 1000.0 / k
    timings = {
        "svd": (t1 - t0) * scale,
        "hosvd": (t2 - t1) * scale,
        "hodmd": (t3 - t2) * scale,
        "pred": (t4 - t3) * scale,
        "total": (t4 - t0) * scale,
    }
    return record, timings
