"""Command-line surface: build, audit, trace, train, grad-check, infer,
and feature export."""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import audit as audit_mod
from . import train as train_mod
from .config import ConfigError, config_from_json, registered_names, resolve_variant
from .image_io import ImageParseError, prepare_input
from .model import build_model
from .tensor import NumericError, ShapeError, Tensor
from .weights import WeightsFormatError, load_weights, save_weights


def _resolve(args) -> "VariantConfig":
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            return config_from_json(fh.read())
    overrides = {}
    if getattr(args, "profile", None):
        overrides["profile"] = args.profile
    if getattr(args, "input_size", None):
        overrides["input_size"] = args.input_size
    if getattr(args, "class_count", None):
        overrides["class_count"] = args.class_count
    if getattr(args, "allow_early_shortcuts", False):
        overrides["allow_early_shortcuts"] = True
    return resolve_variant(args.variant, overrides)


def _metadata(config, seed: int) -> dict:
    return {
        "variant": config.name,
        "profile": config.profile,
        "seed": seed,
        "class_count": config.class_count,
        "input_size": config.input_size,
    }


def _model_from_weights(path: str):
    from .weights import read_weights

    metadata, _ = read_weights(path)
    cfg = resolve_variant(
        metadata["variant"],
        {
            "profile": metadata["profile"],
            "class_count": metadata["class_count"],
            "input_size": metadata["input_size"],
        },
    )
    model = build_model(cfg, seed=metadata.get("seed", 0))
    load_weights(model, path)
    model.eval()
    return model, metadata


def cmd_build(args) -> int:
    config = _resolve(args)
    model = build_model(config, seed=args.seed)
    save_weights(model, args.out, _metadata(config, args.seed))
    print(f"built {config.name} ({config.profile}) -> {args.out}")
    return 0


def cmd_audit(args) -> int:
    if args.weights:
        model, _ = _model_from_weights(args.weights)
    else:
        model = build_model(_resolve(args), seed=0)
    report = audit_mod.count_params(model)
    if args.format == "json":
        print(report.to_json())
    else:
        print(report.to_table())
    return 0


def cmd_trace(args) -> int:
    config = _resolve(args)
    model = build_model(config, seed=0)
    size = args.input_size or config.input_size
    for name, shape in audit_mod.trace_shapes(model, size):
        print(f"{name:<24} {'x'.join(str(e) for e in shape)}")
    return 0


def cmd_train(args) -> int:
    config = _resolve(args)
    if args.data != "synthetic":
        raise ConfigError(f"unsupported dataset {args.data!r} (only 'synthetic')")
    dataset = train_mod.SyntheticDataset(
        class_count=config.class_count,
        samples_per_class=args.samples_per_class,
        image_size=config.input_size,
        seed=args.seed,
    )
    steps_per_epoch = math.ceil(len(dataset) / args.batch_size)
    total_iters = steps_per_epoch * args.epochs
    train_config = train_mod.TrainConfig(
        total_iters=total_iters,
        warmup_iters=args.warmup if args.warmup is not None else max(1, total_iters // 10),
        ema_decay=0.9995 if args.ema else None,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    model = build_model(config, seed=args.seed)
    history = train_mod.train_loop(model, dataset, train_config)
    epoch_acc = train_mod.epoch_accuracy(history, steps_per_epoch)
    for epoch, acc in enumerate(epoch_acc, start=1):
        print(f"epoch {epoch}: train_acc={acc:.4f}")
    if args.out:
        save_weights(model, args.out, _metadata(config, args.seed))
        print(f"checkpoint -> {args.out}")
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            fh.write(train_mod.history_to_csv(history))
        print(f"history -> {args.history}")
    return 0


def cmd_grad_check(args) -> int:
    config = _resolve(args)
    model = build_model(config, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.normal(0.0, 1.0, (1, 3, config.input_size, config.input_size))
    labels = rng.integers(0, config.class_count, size=1)
    report = train_mod.grad_check(model, x, labels, seed=args.seed)
    print(f"checked {len(report.entries)} parameters, max rel err {report.max_rel_err:.3e}")
    print(f"{'parameter':<50} {'analytic':>12} {'numeric':>12} {'rel_err':>10}")
    for e in report.worst(10):
        print(f"{e.param:<50} {e.analytic:>12.5e} {e.numeric:>12.5e} {e.rel_err:>10.3e}")
    if report.max_rel_err > args.tolerance:
        print(f"FAIL: max rel err exceeds tolerance {args.tolerance}")
        return 1
    print(f"PASS: within tolerance {args.tolerance}")
    return 0


def cmd_infer(args) -> int:
    model, metadata = _model_from_weights(args.weights)
    x = Tensor(prepare_input(args.image, metadata["input_size"]))
    logits = model(x).data[0]
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    top = np.argsort(-probs)[: min(5, len(probs))]
    for rank, idx in enumerate(top, start=1):
        print(f"{rank}. class {idx}: {probs[idx]:.6f}")
    return 0


def cmd_export_features(args) -> int:
    model, metadata = _model_from_weights(args.weights)
    x = Tensor(prepare_input(args.image, metadata["input_size"]))
    features = model.backbone.forward_collect(x)
    if args.export_classifier_input:
        tensor = model.assemble_classifier_input(features)
        label = "classifier_input"
    else:
        if not 1 <= args.block <= 5:
            raise ConfigError(f"--block {args.block} out of valid range 1..5")
        tensor = features[args.block - 1]
        label = f"block{args.block}"
    data = np.ascontiguousarray(tensor.data, dtype="<f4")
    with open(args.out, "wb") as fh:
        fh.write(data.tobytes())
    sidecar = {
        "shape": list(tensor.shape),
        "block": None if args.export_classifier_input else args.block,
        "variant": metadata["variant"],
        "dtype": "float32-le",
        "source": label,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"{label} shape {tuple(tensor.shape)} -> {args.out}")
    return 0


def _add_variant_args(p, default_profile=None):
    p.add_argument("--variant", help="registered variant name")
    p.add_argument("--config", help="JSON config document (overrides --variant)")
    p.add_argument("--profile", default=default_profile, choices=["imagenet", "tiny"])
    p.add_argument("--input-size", type=int, dest="input_size")
    p.add_argument("--class-count", type=int, dest="class_count")
    p.add_argument("--allow-early-shortcuts", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exmvit",
        description="Build, audit, and train MobileViT models with channel-expansion shortcuts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="initialize a model and write a weights file")
    _add_variant_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("audit", help="parameter counts and overheads")
    _add_variant_args(p)
    p.add_argument("--weights")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("trace", help="symbolic shape trace")
    _add_variant_args(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("train", help="toy-scale training on synthetic data")
    _add_variant_args(p, default_profile="tiny")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", default="synthetic")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--samples-per-class", type=int, default=64, dest="samples_per_class")
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--ema", action="store_true")
    p.add_argument("--out")
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    _add_variant_args(p, default_profile="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("infer", help="classify a PPM/PGM image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("export-features", help="dump a block feature map as raw f32")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--block", type=int, default=5)
    p.add_argument("--export-classifier-input", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "variant", None) is None and getattr(args, "config", None) is None:
        needs_variant = args.command in ("build", "trace", "train", "grad-check") or (
            args.command == "audit" and not args.weights
        )
        if needs_variant:
            parser.error(f"{args.command} requires --variant or --config")
    try:
        return args.func(args)
    except (ConfigError, WeightsFormatError, ImageParseError, ShapeError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
