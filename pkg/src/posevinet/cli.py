"""Command-line entry point: ``posevinet <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .errors import CheckpointError, ContractError, FormatError
from .fusion import FusionConfig, ViewPrediction, fuse
from .imaging import SkeletonStyle, overlay_landmarks, parse_landmarks, read_ppm, resize_bilinear, write_ppm
from .metrics import ConfusionMatrix, compute_metrics
from .training import (VIEWS, DatasetSplit, TrainConfig, dataset_info, evaluate,
                       gen_synthetic_dataset, load_dataset, split_dataset, train, write_dataset)
from .vit import ViTConfig, forward, gradient_check, init_params


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_gen_data(args) -> int:
    data = gen_synthetic_dataset(args.classes, args.per_class, args.seed,
                                 image_size=args.image_size, views=args.views)
    root = Path(args.out)
    write_dataset([s for view in args.views for s in data[view]], root)
    (root / "dataset.json").write_text(json.dumps(
        {"classes": args.classes, "image_size": args.image_size, "per_class": args.per_class,
         "seed": args.seed, "views": list(args.views)}, sort_keys=True), encoding="utf-8")
    total = sum(len(v) for v in data.values())
    print(f"wrote {total} samples to {root}", file=sys.stderr)
    return 0


def cmd_compose(args) -> int:
    image = read_ppm(Path(args.image).read_bytes())
    landmarks, _, _ = parse_landmarks(Path(args.landmarks).read_text(encoding="utf-8"))
    style = SkeletonStyle(line_thickness=args.thickness, joint_radius=args.radius)
    Path(args.out).write_bytes(write_ppm(overlay_landmarks(image, landmarks, style)))
    return 0


def _num_classes(root, samples) -> int:
    info = dataset_info(root)
    return int(info.get("classes") or max(s.class_index for s in samples) + 1)


def cmd_train(args) -> int:
    samples = load_dataset(args.data, view=args.view)
    if len(samples) < 3:
        raise ContractError(f"view {args.view!r} has {len(samples)} samples, need at least 3")
    image_size = samples[0].image.height
    config = ViTConfig(image_size=image_size, patch_height=args.patch, patch_width=args.patch,
                       embed_dim=args.embed_dim, num_heads=args.heads, depth=args.depth,
                       mlp_hidden=args.mlp_hidden, num_classes=_num_classes(args.data, samples))
    split = split_dataset(samples, args.seed)
    params = init_params(config, args.seed)
    tc = TrainConfig(batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                     lr=args.lr, weight_decay=args.wd, view=args.view)
    report = train(params, split, tc, config)
    ckpt_io.save_checkpoint(report.best_params, config, args.out,
                            meta={"view": args.view, "split_seed": args.seed,
                                  "best_epoch": report.best_epoch})
    if args.report:
        Path(args.report).write_text(report.to_csv(), encoding="utf-8")
    last = report.history[-1]
    print(f"best epoch {report.best_epoch}; final train_acc={last.train_acc:.4f} "
          f"val_acc={last.val_acc:.4f}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    ck = ckpt_io.read_checkpoint(args.ckpt)
    view = ck.meta.get("view")
    seed = args.seed if args.seed is not None else ck.meta.get("split_seed", 0)
    samples = load_dataset(args.data, view=view)
    part = split_dataset(samples, seed).part(args.split)
    loss, acc, preds = evaluate(ck.params, part, ck.config)
    matrix = ConfusionMatrix.from_pairs(ck.config.num_classes,
                                        [s.class_index for s in part], preds)
    if args.metrics:
        Path(args.metrics).write_text(compute_metrics(matrix).to_csv(), encoding="utf-8")
    if args.confusion:
        Path(args.confusion).write_text(matrix.to_csv(), encoding="utf-8")
    print(json.dumps({"split": args.split, "samples": len(part), "loss": loss, "accuracy": acc}))
    return 0


def cmd_infer(args) -> int:
    ck = ckpt_io.read_checkpoint(args.ckpt)
    image = read_ppm(Path(args.image).read_bytes())
    if args.landmarks:
        landmarks, _, _ = parse_landmarks(Path(args.landmarks).read_text(encoding="utf-8"))
        image = overlay_landmarks(image, landmarks)
    size = ck.config.image_size
    if (image.height, image.width) != (size, size):
        image = resize_bilinear(image, size, size)
    dist = forward(image, ck.params, ck.config)
    view = ck.meta.get("view") or "dashboard"
    _emit(ViewPrediction(view, dist).to_json() + "\n", args.out)
    return 0


def cmd_fuse(args, parser) -> int:
    paths = {"dashboard": args.dash, "rearview": args.rear, "rightside": args.side}
    if any(p is None for p in paths.values()):
        parser.error("three views required: pass --dash, --rear and --side")
    preds = []
    for view, path in paths.items():
        pred = ViewPrediction.from_json(Path(path).read_text(encoding="utf-8"))
        if pred.view_id != view:
            raise ContractError(f"{path} holds view {pred.view_id!r}, expected {view!r}")
        preds.append(pred)
    result = fuse(preds, FusionConfig(args.threshold))
    _emit(json.dumps(result.to_dict()) + "\n", args.out)
    return 0


def cmd_gradcheck(args) -> int:
    report = gradient_check(seed=args.seed, tol=args.tol)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posevinet",
                                     description="Pose-overlay vision transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic skeleton dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--views", nargs="+", choices=VIEWS, default=list(VIEWS))

    p = sub.add_parser("compose", help="overlay a landmark skeleton on a PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thickness", type=int, default=2)
    p.add_argument("--radius", type=int, default=4)

    p = sub.add_parser("train", help="train one view's model")
    p.add_argument("--data", required=True)
    p.add_argument("--view", choices=VIEWS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--mlp-hidden", type=int, default=None)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), required=True)
    p.add_argument("--metrics")
    p.add_argument("--confusion")
    p.add_argument("--seed", type=int, default=None, help="split seed (default: from checkpoint)")

    p = sub.add_parser("infer", help="class distribution for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks")
    p.add_argument("--out")

    p = sub.add_parser("fuse", help="combine three per-view distributions")
    p.add_argument("--dash")
    p.add_argument("--rear")
    p.add_argument("--side")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


COMMANDS = {"gen-data": cmd_gen_data, "compose": cmd_compose, "train": cmd_train,
            "eval": cmd_eval, "infer": cmd_infer, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fuse":
            return cmd_fuse(args, parser)
        return COMMANDS[args.command](args)
    except (ContractError, FormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"posevinet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
