"""Differentiable losses for cycle-consistent translation with structural terms.

All functions take torch tensors. Edge losses accept a single ``(H, W)`` map
or any batch of maps ``(..., H, W)``; per-map values are averaged over the
leading dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .config import PAIR_TAGS, ExperimentConfig


@dataclass
class FeatureStack:
    """Feature maps of one image (or batch) with a nonnegative weight per layer."""

    maps: list
    weights: list

    def __post_init__(self):
        if len(self.maps) < 1:
            raise ValueError("a feature stack needs at least one layer")
        if len(self.maps) != len(self.weights):
            raise ValueError("one weight per feature map is required")
        for w in self.weights:
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"layer weights must be finite and >= 0, got {w}")

    def __len__(self):
        return len(self.maps)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def cycle_consistency_loss(original, reconstructed):
    """Mean absolute difference between an image and its reconstruction."""
    _check_same_shape(original, reconstructed, "cycle_consistency_loss")
    return (original - reconstructed).abs().mean()


def perceptual_distance(f_a: FeatureStack, f_b: FeatureStack):
    """Weighted sum of per-layer mean squared feature differences."""
    if len(f_a) != len(f_b):
        raise ValueError(f"feature stacks differ in depth: {len(f_a)} vs {len(f_b)}")
    if list(f_a.weights) != list(f_b.weights):
        raise ValueError("feature stacks carry different layer weights")
    total = 0.0
    for i, (x, y, w) in enumerate(zip(f_a.maps, f_b.maps, f_a.weights)):
        _check_same_shape(x, y, f"perceptual_distance layer {i}")
        total = total + w * (x - y).pow(2).mean()
    return total


def _check_edge_maps(edge_ref, edge_gen, what):
    _check_same_shape(edge_ref, edge_gen, what)
    if edge_ref.dim() < 2:
        raise ValueError(f"{what}: edge maps need at least 2 dims (H, W)")
    for name, m in (("edge_ref", edge_ref), ("edge_gen", edge_gen)):
        d = m.detach()
        if not torch.isfinite(d).all() or d.min() < 0 or d.max() > 1:
            raise ValueError(f"{what}: {name} values must lie in [0, 1]")


def _per_map_mean(values):
    # values has shape (...,); a plain (H, W) input yields a 0-dim tensor
    return values.mean() if values.dim() else values


def edge_preservation_loss(edge_ref, edge_gen):
    """Penalise edges of ``edge_ref`` that are weaker in ``edge_gen``.

    The squared positive part of ``edge_ref - edge_gen`` is summed over the map
    and scaled by the fraction of non-edge pixels in ``edge_ref``, so sparse
    edge maps weigh each missing edge more. Mask and balance factor carry no
    gradient.
    """
    _check_edge_maps(edge_ref, edge_gen, "edge_preservation_loss")
    err = edge_ref - edge_gen
    pos = ((1 + torch.sign(err)) / 2).detach()
    f_bal = (1 - edge_ref).mean(dim=(-2, -1)).detach()
    sq = (pos * err).pow(2).sum(dim=(-2, -1))
    return _per_map_mean(f_bal * sq)


def edge_introduction_loss(edge_ref, edge_gen):
    """Penalise edges present in ``edge_gen`` but weaker or absent in ``edge_ref``.

    Scaled by the edge density of ``edge_ref``.
    """
    _check_edge_maps(edge_ref, edge_gen, "edge_introduction_loss")
    err = edge_ref - edge_gen
    neg = ((1 - torch.sign(err)) / 2).detach()
    density = edge_ref.mean(dim=(-2, -1)).detach()
    sq = (neg * err).pow(2).sum(dim=(-2, -1))
    return _per_map_mean(density * sq)


class NonFiniteError(ValueError):
    pass


def _check_finite(t, what):
    if not torch.isfinite(t.detach()).all():
        raise NonFiniteError(f"{what}: non-finite scores")


def adversarial_generator_loss(fake_scores):
    """Least-squares generator objective: push fake scores toward 1."""
    _check_finite(fake_scores, "adversarial_generator_loss")
    return (fake_scores - 1).pow(2).mean()


def adversarial_discriminator_loss(real_scores, fake_scores):
    _check_finite(real_scores, "adversarial_discriminator_loss")
    _check_finite(fake_scores, "adversarial_discriminator_loss")
    return 0.5 * (real_scores - 1).pow(2).mean() + 0.5 * fake_scores.pow(2).mean()


ADVERSARIAL_TERMS = ("g_adv_A2B", "g_adv_B2A", "d_A", "d_B")
WEIGHTED_TERMS = (
    ("cyc_A",) + ("cyc_B",)
    + tuple(f"p_{t}" for t in PAIR_TAGS)
    + tuple(f"ep_{t}" for t in PAIR_TAGS)
    + tuple(f"ei_{t}" for t in PAIR_TAGS)
)
REPORT_FIELDS = ADVERSARIAL_TERMS + WEIGHTED_TERMS + ("total",)


def term_weight(term: str, config: ExperimentConfig) -> float:
    if term in ADVERSARIAL_TERMS:
        return 1.0
    if term == "cyc_A":
        return config.lambda_cyc_A
    if term == "cyc_B":
        return config.lambda_cyc_B
    kind, tag = term.split("_")
    return config.weight(kind, tag)


def _lambda_name(term):
    if term.startswith("cyc_"):
        return f"lambda_cyc_{term[-1]}"
    return f"lambda_{term}"


@dataclass
class LossReport:
    """Raw and weighted value of every loss term for one step."""

    raw: dict = field(default_factory=dict)
    weighted: dict = field(default_factory=dict)
    total: float = 0.0

    def __getitem__(self, key):
        if key == "total":
            return self.total
        return self.raw.get(key, 0.0)

    def row(self):
        """Flat mapping of report fields (raw values) plus the total."""
        out = {name: float(self.raw.get(name, 0.0)) for name in REPORT_FIELDS[:-1]}
        out["total"] = float(self.total)
        return out

    def weighted_sum(self):
        return math.fsum(self.weighted.values())

    def is_finite(self):
        return all(math.isfinite(v) for v in self.row().values())


def _to_float(value):
    return float(value.detach()) if torch.is_tensor(value) else float(value)


def total_objective(components: dict, config: ExperimentConfig, return_tensor=False):
    """Combine itemised loss values into a :class:`LossReport`.

    Adversarial terms enter unweighted; cycle, perceptual and edge terms are
    multiplied by their config weight. A term whose weight is nonzero must be
    present in ``components``. With ``return_tensor=True`` the differentiable
    total is returned alongside the report.
    """
    unknown = set(components) - set(REPORT_FIELDS[:-1])
    if unknown:
        raise KeyError(f"unknown loss component(s): {sorted(unknown)}")
    report = LossReport()
    total_t = None
    for term in ADVERSARIAL_TERMS + WEIGHTED_TERMS:
        w = term_weight(term, config)
        if term not in components:
            if term in WEIGHTED_TERMS and w != 0:
                raise KeyError(f"{_lambda_name(term)}={w} but component {term!r} is missing")
            continue
        value = components[term]
        report.raw[term] = _to_float(value)
        if w == 0:
            continue
        report.weighted[term] = w * report.raw[term]
        contrib = w * value
        total_t = contrib if total_t is None else total_t + contrib
    report.total = report.weighted_sum()
    if return_tensor:
        if total_t is None:
            total_t = torch.zeros(())
        return report, total_t
    return report
