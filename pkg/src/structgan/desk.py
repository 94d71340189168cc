"""Desk-scale benchmark: synthetic paired data, the four comparison
configurations at reduced width, training and paired evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import builtin_config
from .data import (CorruptionSpec, load_paired_testset, load_unpaired_dataset,
                   synthesize_desk_dataset, write_desk_dataset)
from .evaluation import compare_report, evaluate_config
from .training import train

log = logging.getLogger(__name__)

# reduced widths that keep a 64x64 step well under a second on one CPU core
DESK_OVERRIDES = dict(
    load_size=(64, 64), crop_size=(64, 64), n_scales=6,
    growth_rate=8, layers_per_block=3, first_channels=16,
    ngf=16, n_res_blocks=6, ndf=32, disc_depth=4,
)

# name -> (preset, generator architecture); loss weights stay at their preset values
DESK_CONFIGS = {
    "Cycle+Resnet": ("cycle", "resnet-blocks"),
    "Edge+Resnet": ("cycle+edge", "resnet-blocks"),
    "Edge+FCDenseNet": ("cycle+edge", "fcdensenet"),
    "Perc+FCDenseNet": ("cycle+pdist", "fcdensenet"),
}


def desk_config(name, epochs=(7, 7), **overrides):
    preset, arch = DESK_CONFIGS[name]
    kw = dict(DESK_OVERRIDES, n_iter=epochs[0], n_iter_decay=epochs[1], generator_arch=arch)
    kw.update(overrides)
    return builtin_config(preset).replace(**kw)


def make_desk_dataset(root, kind="fog", severity=0.7, seed=0, n_train=64, n_test=16, size=64):
    root = Path(root)
    if not (root / "pairs.csv").exists():
        train_set = synthesize_desk_dataset(spec=CorruptionSpec(kind, severity, seed),
                                            n=n_train, size=size)
        test_set = synthesize_desk_dataset(spec=CorruptionSpec(kind, severity, seed + 1),
                                           n=n_test, size=size)
        write_desk_dataset(root, train_set, test_set, seed=seed)
    return root


@dataclass
class DeskRun:
    name: str
    distances: dict
    mean: float
    steps: int
    seconds: float


def run_desk_comparison(root, out_dir, names=("Edge+FCDenseNet", "Cycle+Resnet"), seed=0,
                        epochs=(7, 7), report=True, **overrides):
    """Train each named configuration on ``root`` and evaluate on its test pairs.

    ``overrides`` replace config fields of every run (e.g. smaller widths).
    Returns ``(runs, baseline, comparison)`` where ``baseline`` holds the
    distances of the untransformed degraded inputs.
    """
    out_dir = Path(out_dir)
    a = load_unpaired_dataset(root, "A")
    b = load_unpaired_dataset(root, "B")
    testset = load_paired_testset(root)
    baseline = evaluate_config(lambda x: x, testset)
    runs = {}
    for name in names:
        cfg = desk_config(name, epochs, **overrides)
        t0 = time.perf_counter()
        result = train(cfg, a, b, out_dir / name, seed=seed)
        distances = evaluate_config(result.state.G_A2B, testset)
        runs[name] = DeskRun(name, distances, float(np.mean(list(distances.values()))),
                             result.state.step, time.perf_counter() - t0)
        log.info("%s: mean distance %.5f after %d steps (%.0fs)", name, runs[name].mean,
                 result.state.step, runs[name].seconds)
    comparison = None
    if report:
        results = {n: r.distances for n, r in runs.items()}
        results["Untransformed"] = baseline
        comparison = compare_report(results, out_dir / "report")
    return runs, baseline, comparison
