"""Command-line surface for the full pipeline.

Commands: ``synth gen``, ``decompose``, ``build-dataset``, ``train``,
``predict``, ``evaluate``. Every command exits 0 on success and writes a
single-line ``error: ...`` to stderr otherwise.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 malformed
manifest/data, 5 runtime failure (e.g. training divergence).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from modalvit import dataset as ds
from modalvit import hodmd as hd
from modalvit import inference as inf
from modalvit import preprocess as pp
from modalvit import synth
from modalvit import trainer as tr
from modalvit import vit
from modalvit.decomp import svd_reconstruct, truncated_svd
from modalvit.tensor_core import (
    SequenceManifest,
    SnapshotSequence,
    StfError,
    load_sequence,
    read_stf,
    reshape_to_snapshot_matrix,
    snapshot_matrix_to_frames,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_RUNTIME = 5

EXIT_CODE_DOC = (
    "exit codes: 0 success, 2 usage error, 3 missing file, "
    "4 malformed manifest/data, 5 runtime failure"
)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _d_policy(value: str) -> str:
    if value in ("k3", "k5"):
        return value
    if value.startswith("fixed:"):
        try:
            n = int(value.split(":", 1)[1])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad fixed delay {value!r}")
        if n < 1:
            raise argparse.ArgumentTypeError("fixed delay must be >= 1")
        return value
    raise argparse.ArgumentTypeError(f"d-policy must be k3, k5 or fixed:N, got {value!r}")


# ---------------------------------------------------------------------------
# synth gen
# ---------------------------------------------------------------------------


def cmd_synth_gen(args: argparse.Namespace) -> int:
    manifest = synth.make_toy_classes(
        out_dir=args.out_dir,
        num_classes=args.classes,
        sequences_per_class=args.sequences,
        num_frames=args.frames,
        dt=args.dt,
        noise_scale=args.noise,
        image_size=args.image_size,
        seed=args.seed,
    )
    print(json.dumps({"manifest": str(manifest)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------


def _decompose_sequence(
    seq: SnapshotSequence,
    svd_modes: int,
    eps_svd: float,
    eps_dmd: float,
    d_policy: str,
    d_override: Optional[int],
    min_snapshots: Optional[int],
    image_size: Optional[int],
) -> tuple[dict[str, list[np.ndarray]], Optional[hd.DmdModeSet]]:
    """All six product kinds for one fully-valid sequence, plus its mode set."""
    seq = pp.normalize_intensity(seq)
    if image_size is not None and seq.frame_shape != (image_size, image_size):
        seq = pp.resize_bilinear(seq, (image_size, image_size))
    h, w = seq.frame_shape
    k = seq.num_frames
    out: dict[str, list[np.ndarray]] = {kind: [] for kind in ds.KINDS}
    out["original"] = [seq.frames[i] for i in range(k)]

    matrix = reshape_to_snapshot_matrix(seq)
    rank = min(svd_modes, min(matrix.shape))
    svd = truncated_svd(matrix, rank=rank)
    svd_frames = snapshot_matrix_to_frames(svd_reconstruct(svd), (h, w)).astype(np.float32)
    out["svd_recon"] = [svd_frames[i] for i in range(k)]
    out["svd_mode"] = [
        pp.normalize01(svd.left_modes[:, j].reshape(h, w)).astype(np.float32)
        for j in range(svd.rank)
    ]

    d = d_override if d_override is not None else hd.default_delay(k, d_policy)
    svd_seq = seq.with_frames(svd_frames)
    try:
        mode_set, recon = hd.iterative_hodmd(
            svd_seq, d=d, eps_svd=eps_svd, eps_dmd=eps_dmd, min_snapshots=min_snapshots
        )
    except hd.SequenceTooShortError:
        return out, None
    if len(mode_set.modes) == 0:
        return out, None
    out["hodmd_recon"] = [recon[i].astype(np.float32) for i in range(recon.shape[0])]
    mode_images = [pp.render_mode_image(m, (h, w)) for m in mode_set.modes]
    out["hodmd_mode"] = mode_images
    stack = np.stack(mode_images).reshape(len(mode_images), -1).T  # [N_p, M]
    rank2 = min(svd_modes, min(stack.shape))
    svd2 = truncated_svd(stack, rank=rank2)
    recon2 = svd_reconstruct(svd2)
    out["svd_of_hodmd_mode_recon"] = [
        recon2[:, j].reshape(h, w).astype(np.float32) for j in range(recon2.shape[1])
    ]
    return out, mode_set


def cmd_decompose(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise CliError(f"manifest not found: {manifest_path}", EXIT_MISSING)
    try:
        manifest = SequenceManifest.load(manifest_path)
    except FileNotFoundError as e:
        raise CliError(str(e), EXIT_MISSING)
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise CliError(f"malformed manifest: {e}", EXIT_FORMAT)

    base_dir = manifest_path.parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def worker(entry):
        try:
            seq = load_sequence(entry, base_dir)
        except StfError as e:
            raise CliError(f"bad sequence data: {e}", EXIT_FORMAT)
        if seq.roi is not None:
            seq = pp.crop_roi(seq)
        subs = pp.split_on_validity(seq) if not seq.validity.all() else [seq]
        results = {}
        for sub in subs:
            kinds, mode_set = _decompose_sequence(
                sub,
                svd_modes=args.svd_modes,
                eps_svd=args.eps_svd,
                eps_dmd=args.eps_dmd,
                d_policy=args.d_policy,
                d_override=entry.d,
                min_snapshots=args.min_snapshots,
                image_size=args.image_size,
            )
            results[sub.sequence_id] = (kinds, mode_set, entry.label)
        return results

    products: dict[str, dict[str, list[np.ndarray]]] = {}
    labels: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for results in pool.map(worker, manifest.entries):
            for sid, (kinds, mode_set, label) in results.items():
                products[sid] = kinds
                labels[sid] = label if label is not None else "unlabelled"
                if mode_set is not None:
                    hd.write_mode_set(
                        mode_set, out_dir / f"{sid}_modes.stf", out_dir / f"{sid}_modes.json"
                    )
    index_path = ds.save_registry(out_dir, products, labels)
    print(json.dumps({"registry": str(index_path), "sequences": len(products)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# build-dataset
# ---------------------------------------------------------------------------


def cmd_build_dataset(args: argparse.Namespace) -> int:
    reg_dir = Path(args.registry)
    if not (reg_dir / "registry.json").exists():
        raise CliError(f"registry not found: {reg_dir}", EXIT_MISSING)
    try:
        registry, labels = ds.load_registry(reg_dir)
    except (KeyError, json.JSONDecodeError) as e:
        raise CliError(f"malformed registry: {e}", EXIT_FORMAT)

    classes = sorted(set(labels.values()))
    label_idx = {sid: classes.index(lab) for sid, lab in labels.items()}
    try:
        plan = ds.split_sequences(labels, fractions=tuple(args.fractions), seed=args.seed)
    except ValueError as e:
        raise CliError(str(e), EXIT_FORMAT)

    size = args.image_size

    def resized(records):
        out = []
        for r in records:
            img = r.image
            if img.shape != (size, size):
                img = pp.resize_image(img, (size, size)).astype(np.float32)
            out.append(
                ds.SampleRecord(
                    image=img, label=r.label, source_kind=r.source_kind, sequence_id=r.sequence_id
                )
            )
        return out

    try:
        train_records = ds.assemble_case(
            args.case, registry, label_idx, sequence_ids=plan.ids_for("train")
        )
    except ValueError as e:
        raise CliError(str(e), EXIT_FORMAT)
    # validation uses originals; the test split keeps every kind so any
    # test-data variant can be evaluated later
    val_records = [
        ds.SampleRecord(image=img, label=label_idx[sid], source_kind="original", sequence_id=sid)
        for sid in plan.ids_for("val")
        for img in registry[sid]["original"]
    ]
    test_records = [
        ds.SampleRecord(image=img, label=label_idx[sid], source_kind=kind, sequence_id=sid)
        for sid in plan.ids_for("test")
        for kind in ds.KINDS
        for img in registry[sid][kind]
    ]
    built = ds.BuiltDataset(
        classes=classes,
        splits={
            "train": resized(train_records),
            "val": resized(val_records),
            "test": resized(test_records),
        },
    )
    index_path = ds.save_built_dataset(args.out_dir, built)
    counts = {split: len(recs) for split, recs in built.splits.items()}
    print(json.dumps({"dataset": str(index_path), "case": args.case, "samples": counts}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


TRAIN_FLAG_FIELDS = {
    "iters": "max_iters",
    "lr": "target_lr",
    "warmup_fraction": "warmup_fraction",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "min_class_fraction": "min_class_fraction",
    "seed": "seed",
}

VIT_FLAG_FIELDS = {
    "image_size": "image_size",
    "patch_size": "patch_size",
    "blocks": "num_blocks",
    "heads": "num_heads",
    "dim": "proj_dim",
    "block_dropout": "block_dropout",
    "head_dropout": "head_dropout",
}


def _merge_train_config(args: argparse.Namespace, num_classes: int) -> tuple:
    """Config file supplies base values; explicit flags win."""
    file_cfg = {"train": {}, "vit": {}}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_MISSING)
        try:
            file_cfg.update(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise CliError(f"malformed config: {e}", EXIT_FORMAT)

    train_kwargs = dict(file_cfg.get("train", {}))
    for flag, fld in TRAIN_FLAG_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            train_kwargs[fld] = value
    if args.no_augment:
        train_kwargs["augment"] = False

    vit_kwargs = dict(file_cfg.get("vit", {}))
    for flag, fld in VIT_FLAG_FIELDS.items():
        value = getattr(args, flag)
        if value is not None:
            vit_kwargs[fld] = value
    if args.mlp_dims is not None:
        vit_kwargs["mlp_dims"] = tuple(args.mlp_dims)
    if args.head_dims is not None:
        vit_kwargs["head_dims"] = tuple(args.head_dims)
    if "mlp_dims" in vit_kwargs:
        vit_kwargs["mlp_dims"] = tuple(vit_kwargs["mlp_dims"])
    if "head_dims" in vit_kwargs:
        vit_kwargs["head_dims"] = tuple(vit_kwargs["head_dims"])
    vit_kwargs["num_classes"] = num_classes
    try:
        return tr.TrainConfig(**train_kwargs), vit.VitConfig(**vit_kwargs)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad configuration: {e}", EXIT_FORMAT)


def cmd_train(args: argparse.Namespace) -> int:
    ds_dir = Path(args.dataset)
    if not (ds_dir / "index.json").exists():
        raise CliError(f"dataset not found: {ds_dir}", EXIT_MISSING)
    built = ds.load_built_dataset(ds_dir)
    train_cfg, vit_cfg = _merge_train_config(args, num_classes=len(built.classes))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(0,)))
    params = vit.init_params(vit_cfg, rng)
    try:
        result = tr.train(
            params,
            vit_cfg,
            built.samples("train"),
            built.samples("val"),
            train_cfg,
            out_dir=args.out,
            resume_from=args.resume,
        )
    except vit.DivergenceError as e:
        raise CliError(str(e), EXIT_RUNTIME)
    print(
        json.dumps(
            {
                "checkpoint": str(result.best_dir),
                "best_step": result.best_step,
                "best_val_acc": result.best_val_acc,
                "iterations": train_cfg.max_iters,
            }
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def _transform_frames(
    seq: SnapshotSequence, transform: str, args: argparse.Namespace
) -> np.ndarray:
    seq = pp.normalize_intensity(seq)
    if transform == "original":
        return seq.frames
    matrix = reshape_to_snapshot_matrix(seq)
    rank = min(args.svd_modes, min(matrix.shape))
    svd_frames = snapshot_matrix_to_frames(
        svd_reconstruct(truncated_svd(matrix, rank=rank)), seq.frame_shape
    ).astype(np.float32)
    if transform == "svd_recon":
        return svd_frames
    d = hd.default_delay(seq.num_frames, args.d_policy)
    try:
        _, recon = hd.iterative_hodmd(
            seq.with_frames(svd_frames), d=d, eps_svd=args.eps_svd, eps_dmd=args.eps_dmd
        )
    except hd.SequenceTooShortError as e:
        raise CliError(f"sequence too short for hodmd transform: {e}", EXIT_RUNTIME)
    return recon.astype(np.float32)


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt_dir = Path(args.checkpoint)
    if not (ckpt_dir / "header.json").exists():
        raise CliError(f"checkpoint not found: {ckpt_dir}", EXIT_MISSING)
    ck = vit.load_checkpoint(ckpt_dir)
    in_path = Path(args.input)
    if not in_path.exists():
        raise CliError(f"input not found: {in_path}", EXIT_MISSING)

    sequences: list[SnapshotSequence] = []
    if in_path.suffix == ".stf":
        try:
            frames = read_stf(in_path)
        except StfError as e:
            raise CliError(f"bad input data: {e}", EXIT_FORMAT)
        if frames.ndim == 2:
            frames = frames[None]
        sequences.append(
            SnapshotSequence(
                frames=frames, dt=args.dt, sequence_id=args.sequence_id or in_path.stem
            )
        )
    else:
        try:
            manifest = SequenceManifest.load(in_path)
        except FileNotFoundError as e:
            raise CliError(str(e), EXIT_MISSING)
        except (KeyError, ValueError, json.JSONDecodeError) as e:
            raise CliError(f"malformed manifest: {e}", EXIT_FORMAT)
        for entry in manifest.entries:
            seq = load_sequence(entry, in_path.parent)
            if seq.roi is not None:
                seq = pp.crop_roi(seq)
            if not seq.validity.all():
                for sub in pp.split_on_validity(seq):
                    sequences.append(sub)
            else:
                sequences.append(seq)

    results = []
    class_names = args.class_names
    for seq in sequences:
        frames = _transform_frames(seq, args.transform, args)
        record = inf.predict_sequence(
            frames,
            ck.params,
            ck.cfg,
            rule=args.fusion,
            threshold=args.threshold,
            sequence_id=seq.sequence_id,
        )
        verdict: str
        if record.verdict is None:
            verdict = "undetermined"
        elif class_names and record.verdict < len(class_names):
            verdict = class_names[record.verdict]
        else:
            verdict = str(record.verdict)
        results.append(
            {
                "sequence_id": record.sequence_id,
                "verdict": verdict,
                "fused_scores": [float(v) for v in record.fused],
                "fusion_rule": record.fusion_rule,
                "threshold": record.threshold,
                "num_images": int(record.scores.shape[0]),
            }
        )
    payload = results[0] if len(results) == 1 else results
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    ckpt_dir = Path(args.checkpoint)
    if not (ckpt_dir / "header.json").exists():
        raise CliError(f"checkpoint not found: {ckpt_dir}", EXIT_MISSING)
    ds_dir = Path(args.dataset)
    if not (ds_dir / "index.json").exists():
        raise CliError(f"dataset not found: {ds_dir}", EXIT_MISSING)
    ck = vit.load_checkpoint(ckpt_dir)
    built = ds.load_built_dataset(ds_dir)
    samples = built.samples(args.split, kind=args.test_kind)
    if not samples:
        raise CliError(
            f"no {args.test_kind!r} samples in split {args.split!r}", EXIT_FORMAT
        )
    by_seq: dict[str, list[ds.SampleRecord]] = {}
    for s in samples:
        by_seq.setdefault(s.sequence_id, []).append(s)
    records = []
    labels = {}
    for sid in sorted(by_seq):
        group = by_seq[sid]
        frames = np.stack([g.image for g in group])
        records.append(
            inf.predict_sequence(
                frames, ck.params, ck.cfg, rule=args.fusion,
                threshold=args.threshold, sequence_id=sid,
            )
        )
        labels[sid] = group[0].label
    report = inf.evaluate(records, labels, class_names=built.classes)
    if args.out_json:
        Path(args.out_json).write_text(inf.report_to_json(report))
    if args.out_csv:
        Path(args.out_csv).write_text(inf.report_to_csv(report))
    print(
        json.dumps(
            {
                "per_image_accuracy_wo": report.per_image_acc_wo,
                "per_image_accuracy_w": report.per_image_acc_w,
                "per_sequence_accuracy": report.per_sequence_acc,
                "sequences": report.num_sequences,
            }
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


# path-valued flags, rebased onto --workdir when relative
PATH_ARGS = (
    "out_dir", "manifest", "registry", "dataset", "out", "config", "resume",
    "checkpoint", "input", "output", "out_json", "out_csv",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalvit",
        description="Modal-decomposition feature extraction and sequence classification.",
        epilog=EXIT_CODE_DOC,
    )
    parser.add_argument(
        "--workdir", default=".", help="root that relative paths are resolved against"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthetic data tools")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)
    p_gen = synth_sub.add_parser("gen", help="emit a synthetic labelled dataset")
    p_gen.add_argument("--classes", type=int, default=4)
    p_gen.add_argument("--sequences", type=int, default=5, help="sequences per class")
    p_gen.add_argument("--frames", type=int, default=60)
    p_gen.add_argument("--dt", type=float, default=0.01)
    p_gen.add_argument("--noise", type=float, default=0.3)
    p_gen.add_argument("--image-size", type=int, default=32)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-dir", required=True)
    p_gen.set_defaults(func=cmd_synth_gen)

    p_dec = sub.add_parser(
        "decompose", help="run SVD/HODMD over a manifest", epilog=EXIT_CODE_DOC
    )
    p_dec.add_argument("--manifest", required=True)
    p_dec.add_argument("--out-dir", required=True)
    p_dec.add_argument("--eps-svd", type=float, default=hd.DEFAULT_EPS_SVD)
    p_dec.add_argument("--eps-dmd", type=float, default=hd.DEFAULT_EPS_DMD)
    p_dec.add_argument("--d-policy", type=_d_policy, default="k3")
    p_dec.add_argument("--min-snapshots", type=int, default=None)
    p_dec.add_argument("--svd-modes", type=int, default=5)
    p_dec.add_argument("--image-size", type=int, default=None)
    p_dec.add_argument("--jobs", type=int, default=1)
    p_dec.set_defaults(func=cmd_decompose)

    p_build = sub.add_parser(
        "build-dataset", help="assemble a training case", epilog=EXIT_CODE_DOC
    )
    p_build.add_argument("--registry", required=True)
    p_build.add_argument("--out-dir", required=True)
    p_build.add_argument("--case", type=int, choices=range(1, 13), required=True)
    p_build.add_argument(
        "--fractions", type=float, nargs=3, default=[0.6, 0.2, 0.2],
        metavar=("TRAIN", "VAL", "TEST"),
    )
    p_build.add_argument("--image-size", type=int, default=256)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.set_defaults(func=cmd_build_dataset)

    p_train = sub.add_parser("train", help="train the classifier", epilog=EXIT_CODE_DOC)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--config", default=None, help="JSON config; flags override it")
    p_train.add_argument("--resume", default=None)
    p_train.add_argument("--iters", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--warmup-fraction", type=float, default=None)
    p_train.add_argument("--weight-decay", type=float, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--min-class-fraction", type=float, default=None)
    p_train.add_argument("--no-augment", action="store_true")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--image-size", type=int, default=None)
    p_train.add_argument("--patch-size", type=int, default=None)
    p_train.add_argument("--blocks", type=int, default=None)
    p_train.add_argument("--heads", type=int, default=None)
    p_train.add_argument("--dim", type=int, default=None)
    p_train.add_argument("--block-dropout", type=float, default=None)
    p_train.add_argument("--head-dropout", type=float, default=None)
    p_train.add_argument("--mlp-dims", type=int, nargs=2, default=None)
    p_train.add_argument("--head-dims", type=int, nargs=2, default=None)
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser(
        "predict", help="classify a sequence or manifest", epilog=EXIT_CODE_DOC
    )
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--input", required=True, help=".stf stack or manifest.json")
    p_pred.add_argument("--dt", type=float, default=0.01, help="dt for raw .stf input")
    p_pred.add_argument("--sequence-id", default=None)
    p_pred.add_argument("--fusion", choices=inf.FUSION_RULES, default="average")
    p_pred.add_argument("--threshold", type=float, default=0.0)
    p_pred.add_argument(
        "--transform", choices=("original", "svd_recon", "hodmd_recon"), default="original"
    )
    p_pred.add_argument("--svd-modes", type=int, default=5)
    p_pred.add_argument("--eps-svd", type=float, default=hd.DEFAULT_EPS_SVD)
    p_pred.add_argument("--eps-dmd", type=float, default=hd.DEFAULT_EPS_DMD)
    p_pred.add_argument("--d-policy", type=_d_policy, default="k3")
    p_pred.add_argument("--class-names", nargs="*", default=None)
    p_pred.add_argument("--output", default=None)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser(
        "evaluate", help="metrics over a dataset split", epilog=EXIT_CODE_DOC
    )
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--test-kind", choices=ds.KINDS, default="hodmd_recon")
    p_eval.add_argument("--fusion", choices=inf.FUSION_RULES, default="average")
    p_eval.add_argument("--threshold", type=float, default=0.0)
    p_eval.add_argument("--out-json", default=None)
    p_eval.add_argument("--out-csv", default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    workdir = Path(args.workdir)
    for name in PATH_ARGS:
        value = getattr(args, name, None)
        if value is not None and not Path(value).is_absolute():
            setattr(args, name, str(workdir / value))
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except StfError as e:
        print(f"error: malformed data: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
