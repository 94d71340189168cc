"""Paired evaluation: per-image perceptual distance, box-plot summaries and
cross-configuration comparison reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import PairedTestset
from .features import PerceptualExtractor, extract_perceptual_features
from .losses import perceptual_distance
from .networks import transform

EVAL_PERCEPTUAL_SEED = 1
CONFIG_ORDER = ("Cycle+Resnet", "Edge+Resnet", "Edge+FCDenseNet", "Perc+FCDenseNet")


def evaluation_extractor(seed=EVAL_PERCEPTUAL_SEED) -> PerceptualExtractor:
    """Equal-weight multi-tap random pyramid, seeded apart from the training stub."""
    return PerceptualExtractor("analytic-stub", seed=seed)


def evaluate_config(transformer, paired_testset: PairedTestset, metric_extractor=None):
    """Perceptual distance between ``transformer(degraded)`` and the clean twin.

    Returns ``{pair_id: distance}`` ordered by pair id. ``transformer`` is a
    generator module or any callable on ``(1, 3, H, W)`` batches.
    """
    if metric_extractor is None:
        metric_extractor = evaluation_extractor()
    if not metric_extractor.equal_weights:
        raise ValueError("evaluation requires equal feature-map weights")
    if any(p.requires_grad for p in metric_extractor.net.parameters()):
        raise ValueError("evaluation extractor must be frozen")
    pair_ids = getattr(paired_testset, "pair_ids", None)
    if not pair_ids:
        raise ValueError("evaluation requires a paired testset with pair ids")
    was_training = getattr(transformer, "training", False)
    if isinstance(transformer, torch.nn.Module):
        transformer.eval()
    out = {}
    try:
        with torch.no_grad():
            for pid, degraded, clean in paired_testset.pairs():
                x = degraded.unsqueeze(0)
                if hasattr(transformer, "size_multiple"):
                    y = transform(transformer, x, pad=True)
                else:
                    y = transformer(x)
                d = perceptual_distance(extract_perceptual_features(y, metric_extractor),
                                        extract_perceptual_features(clean.unsqueeze(0),
                                                                    metric_extractor))
                out[pid] = float(d)
    finally:
        if was_training:
            transformer.train()
    return dict(sorted(out.items()))


@dataclass
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    n: int
    mean: float
    outliers: list = field(default_factory=list)


def summarize_boxplot(distances) -> BoxStats:
    """Quartiles by linear interpolation and Tukey whiskers.

    Whiskers sit at the most extreme samples within 1.5 IQR of the quartiles;
    samples beyond them are outliers.
    """
    x = np.sort(np.asarray(list(distances), dtype=np.float64))
    if x.size == 0:
        raise ValueError("cannot summarise an empty sample")
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    outliers = x[(x < lo_fence) | (x > hi_fence)]
    return BoxStats(median=float(med), q1=float(q1), q3=float(q3),
                    whisker_low=float(inside.min()), whisker_high=float(inside.max()),
                    n=int(x.size), mean=float(x.mean()),
                    outliers=[float(v) for v in outliers])


def _ordered(names):
    known = [n for n in CONFIG_ORDER if n in names]
    return known + [n for n in names if n not in CONFIG_ORDER]


@dataclass
class ComparisonReport:
    order: list
    stats: dict
    ranking_by_mean: list
    ranking_by_median: list
    figure: Path = None

    def to_json(self):
        return {
            "order": self.order,
            "configs": {k: asdict(v) for k, v in self.stats.items()},
            "ranking_by_mean": self.ranking_by_mean,
            "ranking_by_median": self.ranking_by_median,
        }


def compare_report(results: dict, out_dir=None) -> ComparisonReport:
    """Box statistics and mean per configuration, ranked lowest distance first.

    ``results`` maps configuration name to ``{pair_id: distance}`` (or a plain
    list of distances). Known configuration names are ordered Cycle+Resnet,
    Edge+Resnet, Edge+FCDenseNet, Perc+FCDenseNet; others follow in input
    order. With ``out_dir`` the table is written to ``boxstats.json`` and
    ``summary.csv`` and the figure to ``comparison.png``.
    """
    if len(results) < 2:
        raise ValueError("comparison needs at least two configurations")
    keysets = {name: (tuple(sorted(v)) if isinstance(v, dict) else len(v))
               for name, v in results.items()}
    if len(set(keysets.values())) != 1:
        raise ValueError(f"configurations were evaluated on different testsets: {keysets}")
    order = _ordered(list(results))
    values = {n: list(results[n].values()) if isinstance(results[n], dict) else list(results[n])
              for n in order}
    stats = {n: summarize_boxplot(values[n]) for n in order}
    report = ComparisonReport(
        order=order, stats=stats,
        ranking_by_mean=sorted(order, key=lambda n: (stats[n].mean, order.index(n))),
        ranking_by_median=sorted(order, key=lambda n: (stats[n].median, order.index(n))))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "boxstats.json").write_text(json.dumps(report.to_json(), indent=2))
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["config", "n", "mean", "median", "q1", "q3",
                         "whisker_low", "whisker_high", "n_outliers"])
            for n in order:
                s = stats[n]
                wr.writerow([n, s.n, s.mean, s.median, s.q1, s.q3, s.whisker_low,
                             s.whisker_high, len(s.outliers)])
        report.figure = render_boxplot(values, order, out_dir / "comparison.png")
    return report


def render_boxplot(values: dict, order, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.8 * len(order) + 2, 4))
    boxes = ax.boxplot([values[n] for n in order], whis=1.5)["boxes"]
    ax.set_xticks(range(1, len(order) + 1), order, rotation=15)
    ax.set_ylabel("perceptual distance")
    fig.tight_layout()
    # the drawn box labels travel with the image so the artifact can be checked
    labels = [t.get_text() for t in ax.get_xticklabels()][:len(boxes)]
    fig.savefig(path, dpi=100, metadata={"Description": json.dumps(labels)})
    plt.close(fig)
    return Path(path)


def write_distances_csv(distances: dict, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["pair_id", "distance"])
        for pid, d in sorted(distances.items()):
            wr.writerow([pid, repr(float(d))])
    return Path(path)


def write_boxstats_json(stats: BoxStats, path):
    Path(path).write_text(json.dumps(asdict(stats), indent=2))
    return Path(path)
