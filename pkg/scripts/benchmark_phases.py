#!/usr/bin/env python3
"""Per-phase timing of the prediction pipeline on a synthetic sequence.

Reports per-image millisecond averages for the SVD reconstruction, HOSVD
reduction, delay-embedded decomposition, and network prediction phases.

Usage:
    python scripts/benchmark_phases.py [--size 256] [--frames 45] [--repeats 3]
"""

import argparse
import json

import numpy as np

from modalvit.inference import timed_pipeline
from modalvit.synth import Tone, make_oscillator
from modalvit.vit import VitConfig, init_params


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--frames", type=int, default=45)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--patch-size", type=int, default=32)
    args = parser.parse_args(argv)

    n = args.size
    profile = np.exp(-0.5 * ((np.arange(n) - n / 2.0) / (n / 6.0)) ** 2)
    seq = make_oscillator(
        (n, n),
        [Tone(pattern=np.outer(profile, profile), omega=2.0 * np.pi * 3.0)],
        num_frames=args.frames,
        dt=0.01,
        noise_scale=0.01,
        seed=0,
    )
    cfg = VitConfig(
        image_size=n,
        patch_size=args.patch_size,
        num_blocks=2,
        num_heads=4,
        proj_dim=32,
        mlp_dims=(64, 32),
        head_dims=(128, 64),
        num_classes=4,
    )
    params = init_params(cfg, np.random.default_rng(0))

    rows = []
    for i in range(args.repeats):
        _, timings = timed_pipeline(seq, params, cfg, d=args.frames // 3)
        rows.append(timings)
        print(json.dumps({"run": i, **{k: round(v, 3) for k, v in timings.items()}}))
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    print(json.dumps({"mean_ms_per_image": {k: round(v, 3) for k, v in means.items()}}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
