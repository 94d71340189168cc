import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from structgan.config import builtin_config
from structgan.losses import (FeatureStack, REPORT_FIELDS, adversarial_discriminator_loss,
                              adversarial_generator_loss, cycle_consistency_loss,
                              edge_introduction_loss, edge_preservation_loss,
                              perceptual_distance, total_objective)

T = lambda a: torch.tensor(np.asarray(a, dtype=float))  # noqa: E731


# --- cycle consistency ------------------------------------------------------

def test_cycle_identity():
    a = torch.rand(3, 5, 5)
    assert cycle_consistency_loss(a, a.clone()).item() == 0


@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 4, 4), (3, 17, 9)])
def test_cycle_constant_offset(shape):
    a = torch.full(shape, 0.5)
    assert cycle_consistency_loss(a, -a).item() == 1.0


def test_cycle_matches_loop(rng):
    for _ in range(20):
        a, b = rng.uniform(-1, 1, (3, 4, 4)), rng.uniform(-1, 1, (3, 4, 4))
        assert cycle_consistency_loss(T(a), T(b)).item() == pytest.approx(
            oracles.l1_mean(a, b), abs=1e-9)


def test_cycle_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        cycle_consistency_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


@given(st.floats(0, 100), st.integers(0, 2**31 - 1))
def test_cycle_scaling(k, seed):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(3, 4, 4)), g.normal(size=(3, 4, 4))
    lhs = cycle_consistency_loss(T(k * a), T(k * b)).item()
    rhs = k * cycle_consistency_loss(T(a), T(b)).item()
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# --- perceptual distance ----------------------------------------------------

def _stack(arrs, weights):
    return FeatureStack([T(a) for a in arrs], list(weights))


def test_perceptual_identity(rng):
    arrs = [rng.normal(size=(4, 8, 8)), rng.normal(size=(8, 4, 4))]
    s = _stack(arrs, [0.5, 0.5])
    assert perceptual_distance(s, _stack(arrs, [0.5, 0.5])).item() == 0


def test_perceptual_weighted_sum():
    # per-layer MSE 2 (constant offset sqrt 2) and 4 (offset 2)
    a = _stack([np.zeros((1, 2, 2)), np.zeros((2, 1, 1))], [0.5, 0.5])
    b = _stack([np.full((1, 2, 2), np.sqrt(2)), np.full((2, 1, 1), 2.0)], [0.5, 0.5])
    assert perceptual_distance(a, b).item() == pytest.approx(3.0, abs=1e-12)


def test_perceptual_matches_loop(rng):
    for _ in range(20):
        n = int(rng.integers(1, 4))
        shapes = [(int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
                  for _ in range(n)]
        w = rng.uniform(0, 1, n)
        xa = [rng.normal(size=s) for s in shapes]
        xb = [rng.normal(size=s) for s in shapes]
        got = perceptual_distance(_stack(xa, w), _stack(xb, w)).item()
        assert got == pytest.approx(oracles.perceptual(xa, xb, w), abs=1e-9)


def test_perceptual_mismatch_errors():
    a = _stack([np.zeros((1, 2, 2))], [1.0])
    with pytest.raises(ValueError):
        perceptual_distance(a, _stack([np.zeros((1, 2, 2)), np.zeros((1, 1, 1))], [1, 1]))
    with pytest.raises(ValueError):
        perceptual_distance(a, _stack([np.zeros((1, 2, 3))], [1.0]))
    with pytest.raises(ValueError):
        perceptual_distance(a, _stack([np.zeros((1, 2, 2))], [0.5]))


def test_feature_stack_validation():
    with pytest.raises(ValueError):
        FeatureStack([], [])
    with pytest.raises(ValueError):
        FeatureStack([torch.zeros(1)], [-1.0])
    with pytest.raises(ValueError):
        FeatureStack([torch.zeros(1)], [float("nan")])


# --- edge losses -----------------------------------------------------------

def test_ep_equal_maps_zero(rng):
    m = T(rng.uniform(0, 1, (8, 8)))
    assert edge_preservation_loss(m, m.clone()).item() == 0


def test_ep_stronger_generated_edges_not_punished():
    assert edge_preservation_loss(torch.zeros(2, 2), torch.ones(2, 2)).item() == 0


def test_ep_hand_example():
    ref = T([[1, 1], [0, 0]])
    assert edge_preservation_loss(ref, torch.zeros(2, 2, dtype=ref.dtype)).item() == 1.0


def test_ei_equal_maps_zero(rng):
    m = T(rng.uniform(0, 1, (8, 8)))
    assert edge_introduction_loss(m, m.clone()).item() == 0


def test_ei_weaker_generated_edges_not_punished():
    assert edge_introduction_loss(torch.ones(2, 2), torch.zeros(2, 2)).item() == 0


def test_ei_hand_example():
    ref, gen = T([[1, 0], [0, 0]]), T([[1, 1], [0, 0]])
    assert edge_introduction_loss(ref, gen).item() == 0.25


def test_edge_losses_match_loop(rng):
    for _ in range(100):
        ref, gen = rng.uniform(0, 1, (8, 8)), rng.uniform(0, 1, (8, 8))
        assert edge_preservation_loss(T(ref), T(gen)).item() == pytest.approx(
            oracles.edge_preservation(ref, gen), abs=1e-7)
        assert edge_introduction_loss(T(ref), T(gen)).item() == pytest.approx(
            oracles.edge_introduction(ref, gen), abs=1e-7)


def test_edge_losses_batched_mean(rng):
    ref, gen = rng.uniform(0, 1, (3, 5, 5)), rng.uniform(0, 1, (3, 5, 5))
    expect = np.mean([oracles.edge_preservation(r, g) for r, g in zip(ref, gen)])
    assert edge_preservation_loss(T(ref), T(gen)).item() == pytest.approx(expect, abs=1e-9)


@pytest.mark.parametrize("fn", [edge_preservation_loss, edge_introduction_loss])
def test_edge_loss_errors(fn):
    with pytest.raises(ValueError, match="shape"):
        fn(torch.zeros(2, 2), torch.zeros(2, 3))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        fn(torch.full((2, 2), 1.5), torch.zeros(2, 2))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        fn(torch.zeros(2, 2), torch.full((2, 2), -0.1))


unit_maps = arrays(np.float64, (6, 6), elements=st.floats(0, 1))


@settings(max_examples=60, deadline=None)
@given(unit_maps, unit_maps)
def test_edge_losses_nonnegative(ref, gen):
    assert edge_preservation_loss(T(ref), T(gen)).item() >= 0
    assert edge_introduction_loss(T(ref), T(gen)).item() >= 0


@settings(max_examples=60, deadline=None)
@given(unit_maps, unit_maps, st.integers(0, 35), st.floats(0, 1))
def test_one_sidedness(ref, gen, idx, frac):
    i, j = divmod(idx, 6)
    up = gen.copy()
    up[i, j] = up[i, j] + frac * (1 - up[i, j]) if up[i, j] >= ref[i, j] else \
        ref[i, j] + frac * (1 - ref[i, j])
    assert edge_preservation_loss(T(ref), T(up)).item() <= edge_preservation_loss(
        T(ref), T(gen)).item()
    down = gen.copy()
    down[i, j] = down[i, j] * (1 - frac) if down[i, j] <= ref[i, j] else ref[i, j] * (1 - frac)
    assert edge_introduction_loss(T(ref), T(down)).item() <= edge_introduction_loss(
        T(ref), T(gen)).item()


def test_balance_monotonicity():
    # one missing edge pixel; extra edge pixels in ref that gen matches exactly
    gen = torch.zeros(4, 4, dtype=torch.float64)
    ref = gen.clone()
    ref[0, 0] = 1.0
    values = []
    for k in range(1, 8):
        r = ref.clone()
        g = gen.clone()
        flat_r, flat_g = r.view(-1), g.view(-1)
        flat_r[1:k] = 1.0
        flat_g[1:k] = 1.0
        values.append(edge_preservation_loss(r, g).item())
    assert all(x > y for x, y in zip(values, values[1:]))


# --- adversarial -------------------------------------------------------------

def test_adversarial_anchors():
    assert adversarial_generator_loss(torch.ones(1, 1, 4, 4)).item() == 0
    assert adversarial_generator_loss(torch.zeros(1, 1, 4, 4)).item() == 1
    assert adversarial_discriminator_loss(torch.ones(4, 4), torch.zeros(4, 4)).item() == 0
    assert adversarial_discriminator_loss(torch.zeros(4, 4), torch.ones(4, 4)).item() == 1


def test_adversarial_match_loop(rng):
    for _ in range(20):
        r, f = rng.normal(size=(1, 1, 5, 5)), rng.normal(size=(1, 1, 5, 5))
        assert adversarial_generator_loss(T(f)).item() == pytest.approx(
            oracles.lsgan_generator(f), abs=1e-9)
        assert adversarial_discriminator_loss(T(r), T(f)).item() == pytest.approx(
            oracles.lsgan_discriminator(r, f), abs=1e-9)


def test_adversarial_rejects_nonfinite():
    with pytest.raises(ValueError):
        adversarial_generator_loss(torch.tensor([float("nan")]))
    with pytest.raises(ValueError):
        adversarial_discriminator_loss(torch.tensor([1.0]), torch.tensor([float("inf")]))


# --- total objective -----------------------------------------------------------

def _zeros():
    return {k: 0.0 for k in REPORT_FIELDS[:-1]}


def test_total_cycle_preset():
    comps = _zeros()
    comps.update(cyc_A=0.3, cyc_B=0.2)
    rep = total_objective(comps, builtin_config("cycle"))
    assert rep.total == pytest.approx(5.0, abs=1e-12)
    assert rep.weighted == {"g_adv_A2B": 0.0, "g_adv_B2A": 0.0, "d_A": 0.0, "d_B": 0.0,
                            "cyc_A": 3.0, "cyc_B": pytest.approx(2.0)}


def test_total_all_zero():
    assert total_objective(_zeros(), builtin_config("cycle+pdist")).total == 0


def test_total_edge_preset():
    comps = _zeros()
    comps["ep_afb"] = 0.01
    assert total_objective(comps, builtin_config("cycle+edge")).total == pytest.approx(1.0)


def test_total_adversarial_unweighted():
    comps = {"g_adv_A2B": 0.1, "g_adv_B2A": 0.2, "d_A": 0.3, "d_B": 0.4, "cyc_A": 0, "cyc_B": 0}
    assert total_objective(comps, builtin_config("cycle")).total == pytest.approx(1.0)


def test_total_missing_component_names_lambda():
    with pytest.raises(KeyError, match="lambda_ep_farb"):
        total_objective({"cyc_A": 0, "cyc_B": 0, "ep_afb": 0, "ei_bfa": 0, "ei_fbra": 0},
                        builtin_config("cycle+edge"))


def test_total_tensor_matches_report(rng):
    comps = {k: torch.tensor(float(rng.uniform())) for k in REPORT_FIELDS[:-1]}
    rep, t = total_objective(comps, builtin_config("cycle+edge"), return_tensor=True)
    assert t.item() == pytest.approx(rep.total, rel=1e-6)
    assert rep.total == pytest.approx(sum(rep.weighted.values()), abs=1e-12)
