"""Command line entry point: ``structgan {train,evaluate,transform,synth}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch
from PIL import Image

from .config import builtin_config, load_experiment_config, preset_names
from .data import (CorruptionSpec, UnpairedDataset, load_paired_testset,
                   synthesize_desk_dataset, to_tensor, to_uint8, write_desk_dataset)
from .evaluation import (compare_report, evaluate_config, render_boxplot,
                         summarize_boxplot, write_boxstats_json, write_distances_csv)
from .features import EdgeDetector, load_segnet
from .networks import transform
from .training import load_generator, train


def _identity(x):
    return x


def cmd_train(args):
    if args.config:
        config = load_experiment_config(args.config)
    else:
        config = builtin_config(args.preset)
    if args.edge_detector != config.edge_detector:
        config = config.replace(edge_detector=args.edge_detector)
    detector = EdgeDetector(args.edge_detector, weights=args.edge_weights)
    segnet = load_segnet(args.segnet) if args.segnet else None
    result = train(config, UnpairedDataset.from_folder(args.data_a, "A"),
                   UnpairedDataset.from_folder(args.data_b, "B"), args.out, seed=args.seed,
                   resume=args.resume, max_steps=args.max_steps, segnet=segnet,
                   edge_detector=detector)
    for path in result.checkpoints:
        print(path)
    return 0


def cmd_evaluate(args):
    testset = load_paired_testset(args.testset)
    net = load_generator(args.checkpoint, args.direction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    distances = evaluate_config(net, testset)
    baseline = evaluate_config(_identity, testset)
    write_distances_csv(distances, out / "distances.csv")
    write_boxstats_json(summarize_boxplot(distances.values()), out / "boxstats.json")
    report = compare_report({"untransformed": baseline, "model": distances})
    render_boxplot({"untransformed": list(baseline.values()), "model": list(distances.values())},
                   report.order, out / "comparison.png")
    print(f"mean distance {report.stats['model'].mean:.6g} "
          f"(untransformed {report.stats['untransformed'].mean:.6g})")
    return 0


def cmd_transform(args):
    net = load_generator(args.checkpoint, args.direction)
    src, dst = Path(args.input), Path(args.out)
    dst.mkdir(parents=True, exist_ok=True)
    ds = UnpairedDataset.from_folder(src)
    with torch.no_grad():
        for i, path in enumerate(ds.items):
            y = transform(net, to_tensor(ds.load(i)), pad=True)
            Image.fromarray(to_uint8(y)).save(dst / path.name)
    return 0


def cmd_synth(args):
    train_set = synthesize_desk_dataset(
        spec=CorruptionSpec(args.kind, args.severity, args.seed), n=args.n_train, size=args.size)
    test_set = synthesize_desk_dataset(
        spec=CorruptionSpec(args.kind, args.severity, args.seed + 1), n=args.n_test,
        size=args.size)
    write_desk_dataset(args.out, train_set, test_set, seed=args.seed)
    print(args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="structgan")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a generator pair")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path)
    src.add_argument("--preset", choices=preset_names(), default="cycle")
    t.add_argument("--data-a", required=True, type=Path, help="degraded-domain image folder")
    t.add_argument("--data-b", required=True, type=Path, help="clean-domain image folder")
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--edge-detector", choices=("sobel", "hed"), default="sobel")
    t.add_argument("--edge-weights", type=Path, help="state dict for --edge-detector hed")
    t.add_argument("--segnet", type=Path, help="segmentation network saved by save_segnet")
    t.add_argument("--resume", type=Path)
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="paired perceptual-distance evaluation")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--testset", required=True, type=Path, help="folder containing pairs.csv")
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--direction", choices=("A2B", "B2A"), default="A2B")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("transform", help="enhance a folder of images")
    x.add_argument("--checkpoint", required=True, type=Path)
    x.add_argument("--in", dest="input", required=True, type=Path)
    x.add_argument("--out", required=True, type=Path)
    x.add_argument("--direction", choices=("A2B", "B2A"), default="A2B")
    x.set_defaults(func=cmd_transform)

    s = sub.add_parser("synth", help="write a synthetic paired desk dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--kind", choices=("fog", "night", "rain"), default="fog")
    s.add_argument("--severity", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-train", type=int, default=64)
    s.add_argument("--n-test", type=int, default=16)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
