"""Two-generator / two-discriminator training loop.

Domain A is the degraded domain, domain B the clean one. Pair tags name the
two images a constraint compares:

====== ======================= =========================
tag    reference               generated
====== ======================= =========================
afb    a (original A)          b_f = G_A2B(a)
bfa    b (original B)          a_f = G_B2A(b)
farb   b_f                     a_r = G_B2A(b_f)
fbra   a_f                     b_r = G_A2B(a_f)
====== ======================= =========================
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import (ExperimentConfig, config_hash, learning_rate_at,
                     parse_config_text, serialize_config)
from .data import EpochSampler, UnpairedDataset, preprocess
from .features import (EdgeDetector, PerceptualExtractor, SegNet, detect_edges,
                       extract_perceptual_features, freeze, parameter_checksum, segment)
from .losses import (REPORT_FIELDS, LossReport, NonFiniteError, adversarial_discriminator_loss,
                     adversarial_generator_loss, cycle_consistency_loss,
                     edge_introduction_loss, edge_preservation_loss, perceptual_distance,
                     total_objective)
from .networks import (DiscriminatorSpec, TransformerSpec, build_discriminator,
                       build_transformer, discriminate)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "structgan-checkpoint"
CHECKPOINT_VERSION = 1
TRAIN_PERCEPTUAL_SEED = 0

PAIRS = {
    "afb": ("a", "b_f"),
    "bfa": ("b", "a_f"),
    "farb": ("b_f", "a_r"),
    "fbra": ("a_f", "b_r"),
}
_KINDS = {"p": "perceptual", "ep": "edge_preservation", "ei": "edge_introduction"}


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class ImagePool:
    """Buffer of past fakes shown to the discriminator.

    Until full, every query is stored and returned unchanged. Once full, each
    query has a 1/2 chance of returning a uniformly chosen stored image, which
    is then replaced by the query.
    """

    def __init__(self, capacity=50, seed=0):
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.buffer = []
        self.swaps = 0
        self.last_slot = None

    def __len__(self):
        return len(self.buffer)

    def query_one(self, fake):
        self.last_slot = None
        if self.capacity == 0:
            return fake
        if len(self.buffer) < self.capacity:
            self.buffer.append(fake.detach().clone())
            return fake
        if self.rng.random() < 0.5:
            slot = int(self.rng.integers(self.capacity))
            old = self.buffer[slot]
            self.buffer[slot] = fake.detach().clone()
            self.swaps += 1
            self.last_slot = slot
            return old
        return fake

    def query(self, fakes):
        """Query every image of an ``(N, C, H, W)`` batch."""
        return torch.stack([self.query_one(f) for f in fakes])

    def state(self):
        return {"capacity": self.capacity, "buffer": [t.clone() for t in self.buffer],
                "rng": self.rng.bit_generator.state, "swaps": self.swaps}

    def set_state(self, state):
        self.capacity = state["capacity"]
        self.buffer = [t.clone() for t in state["buffer"]]
        self.rng.bit_generator.state = state["rng"]
        self.swaps = state["swaps"]


def pool_query(pool: ImagePool, fake):
    return pool.query_one(fake)


@dataclass(frozen=True)
class LossTerm:
    name: str          # LossReport field, e.g. "ep_afb"
    kind: str          # cycle | perceptual | edge_preservation | edge_introduction
    reference: str
    generated: str
    weight: float


def wire_losses(config: ExperimentConfig):
    """Constraint terms with nonzero weight; adversarial terms are always present."""
    terms = []
    if config.lambda_cyc_A:
        terms.append(LossTerm("cyc_A", "cycle", "a", "a_r", config.lambda_cyc_A))
    if config.lambda_cyc_B:
        terms.append(LossTerm("cyc_B", "cycle", "b", "b_r", config.lambda_cyc_B))
    for short, kind in _KINDS.items():
        weights = {"p": config.lambda_p, "ep": config.lambda_ep, "ei": config.lambda_ei}[short]
        for tag, w in weights.items():
            if not w:
                continue
            if tag not in PAIRS:
                raise ValueError(f"lambda_{short}_{tag}={w} names a pair the graph cannot form")
            ref, gen = PAIRS[tag]
            terms.append(LossTerm(f"{short}_{tag}", kind, ref, gen, w))
    return terms


@dataclass
class TrainState:
    config: ExperimentConfig
    G_A2B: torch.nn.Module
    G_B2A: torch.nn.Module
    D_A: torch.nn.Module
    D_B: torch.nn.Module
    opt_G: torch.optim.Optimizer
    opt_D: torch.optim.Optimizer
    pool_A: ImagePool
    pool_B: ImagePool
    edge_detector: EdgeDetector
    perceptual: PerceptualExtractor
    segnet: SegNet = None
    seed: int = 0
    epoch: int = 0
    step: int = 0
    terms: list = field(default_factory=list)

    def generators(self):
        return [self.G_A2B, self.G_B2A]

    def discriminators(self):
        return [self.D_A, self.D_B]


def _set_requires_grad(nets, flag):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


def build_train_state(config: ExperimentConfig, seed=0, segnet=None, edge_detector=None,
                      perceptual=None) -> TrainState:
    if config.use_seg_discriminator:
        if segnet is None:
            raise ValueError("use_seg_discriminator requires a segmentation network")
        if segnet.n_classes != config.seg_classes:
            raise ValueError(f"segmentation network has {segnet.n_classes} classes, "
                             f"config expects seg_classes={config.seg_classes}")
    torch.manual_seed(seed)
    gspec = TransformerSpec.from_config(config)
    g_a2b = build_transformer(gspec, config.crop_size)
    g_b2a = build_transformer(gspec, config.crop_size)
    d_a = build_discriminator(DiscriminatorSpec(3, config.disc_depth, config.ndf))
    k = config.seg_classes if config.use_seg_discriminator else 0
    d_b = build_discriminator(DiscriminatorSpec(3 + k, config.disc_depth, config.ndf))
    betas = (config.beta1, 0.999)
    opt_g = torch.optim.Adam(list(g_a2b.parameters()) + list(g_b2a.parameters()),
                             lr=config.base_lr, betas=betas)
    opt_d = torch.optim.Adam(list(d_a.parameters()) + list(d_b.parameters()),
                             lr=config.base_lr, betas=betas)
    if edge_detector is None:
        edge_detector = EdgeDetector(config.edge_detector)
    if perceptual is None:
        perceptual = PerceptualExtractor(config.perceptual_extractor, seed=TRAIN_PERCEPTUAL_SEED)
    return TrainState(
        config=config, G_A2B=g_a2b, G_B2A=g_b2a, D_A=d_a, D_B=d_b, opt_G=opt_g, opt_D=opt_d,
        pool_A=ImagePool(config.pool_size, seed=seed * 2 + 1),
        pool_B=ImagePool(config.pool_size, seed=seed * 2 + 2),
        edge_detector=edge_detector, perceptual=perceptual, segnet=segnet, seed=seed,
        terms=wire_losses(config))


def set_learning_rate(state: TrainState, lr: float):
    for opt in (state.opt_G, state.opt_D):
        for group in opt.param_groups:
            group["lr"] = lr


def _disc_B(state, images):
    seg = segment(images, state.segnet) if state.config.use_seg_discriminator else None
    return discriminate(state.D_B, images, seg)


def generator_pass(state: TrainState, a, b):
    """Forward both cycles and evaluate every generator-side loss component.

    Returns ``(images, components)`` where components are differentiable
    scalars keyed by :data:`REPORT_FIELDS` names.
    """
    images = {"a": a, "b": b}
    images["b_f"] = state.G_A2B(a)
    images["a_f"] = state.G_B2A(b)
    images["a_r"] = state.G_B2A(images["b_f"])
    images["b_r"] = state.G_A2B(images["a_f"])
    comps = {
        "g_adv_A2B": adversarial_generator_loss(_disc_B(state, images["b_f"])),
        "g_adv_B2A": adversarial_generator_loss(discriminate(state.D_A, images["a_f"])),
        "cyc_A": cycle_consistency_loss(a, images["a_r"]),
        "cyc_B": cycle_consistency_loss(b, images["b_r"]),
    }
    edges, feats = {}, {}

    def edge(name):
        if name not in edges:
            edges[name] = detect_edges(images[name], state.edge_detector)
        return edges[name]

    def feat(name):
        if name not in feats:
            feats[name] = extract_perceptual_features(images[name], state.perceptual)
        return feats[name]

    for term in state.terms:
        if term.kind == "perceptual":
            comps[term.name] = perceptual_distance(feat(term.reference), feat(term.generated))
        elif term.kind == "edge_preservation":
            comps[term.name] = edge_preservation_loss(edge(term.reference), edge(term.generated))
        elif term.kind == "edge_introduction":
            comps[term.name] = edge_introduction_loss(edge(term.reference), edge(term.generated))
    return images, comps


def generator_update(state: TrainState, batch_a, batch_b):
    """Joint step of both generators on adversarial + constraint terms.

    Discriminator parameters are excluded from the gradient. Returns the
    forward images (for the discriminator update) and the raw components.
    """
    for net in state.generators() + state.discriminators():
        net.train()
    _set_requires_grad(state.discriminators(), False)
    try:
        images, comps = generator_pass(state, batch_a, batch_b)
        report, total = total_objective(comps, state.config, return_tensor=True)
        if not torch.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite generator loss at step {state.step}", report)
        state.opt_G.zero_grad(set_to_none=True)
        total.backward()
        state.opt_G.step()
    finally:
        _set_requires_grad(state.discriminators(), True)
    return images, {k: v.detach() for k, v in comps.items()}


def discriminator_update(state: TrainState, batch_a, batch_b, images, step=True):
    """Least-squares step of both discriminators on real images and pooled fakes.

    Fakes are detached, so generator parameters never receive gradient here.
    """
    fake_a = state.pool_A.query(images["a_f"].detach())
    fake_b = state.pool_B.query(images["b_f"].detach())
    d_a = adversarial_discriminator_loss(discriminate(state.D_A, batch_a),
                                         discriminate(state.D_A, fake_a))
    d_b = adversarial_discriminator_loss(_disc_B(state, batch_b), _disc_B(state, fake_b))
    if step:
        state.opt_D.zero_grad(set_to_none=True)
        (d_a + d_b).backward()
        state.opt_D.step()
    return {"d_A": d_a.detach(), "d_B": d_b.detach()}


def train_step(state: TrainState, batch_a, batch_b, update_discriminators=True):
    """One generator update followed by one discriminator update.

    Batches are ``(N, 3, H, W)`` tensors in [-1, 1]. Returns
    ``(state, LossReport)``; the discriminator terms are measured on the
    pooled fakes before the discriminator step.
    """
    try:
        images, comps = generator_update(state, batch_a, batch_b)
        comps.update(discriminator_update(state, batch_a, batch_b, images,
                                          step=update_discriminators))
    except NonFiniteError as exc:
        raise TrainingDivergedError(f"step {state.step + 1}: {exc}",
                                    LossReport(total=float("nan"))) from exc
    report = total_objective(comps, state.config)
    state.step += 1
    if not report.is_finite():
        raise TrainingDivergedError(f"non-finite loss at step {state.step}", report)
    return state, report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: TrainState, path, extra=None):
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": serialize_config(state.config),
        "config_hash": config_hash(state.config),
        "transformer_spec": TransformerSpec.from_config(state.config).to_dict(),
        "discriminator_specs": {"A": state.D_A.spec.to_dict(), "B": state.D_B.spec.to_dict()},
        "G_A2B": state.G_A2B.state_dict(),
        "G_B2A": state.G_B2A.state_dict(),
        "D_A": state.D_A.state_dict(),
        "D_B": state.D_B.state_dict(),
        "opt_G": state.opt_G.state_dict(),
        "opt_D": state.opt_D.state_dict(),
        "pool_A": state.pool_A.state(),
        "pool_B": state.pool_B.state(),
        "epoch": state.epoch,
        "step": state.step,
        "seed": state.seed,
        "torch_rng": torch.get_rng_state(),
        "extra": extra or {},
    }
    if state.segnet is not None:
        blob["segnet"] = {"config": state.segnet.config, "state_dict": state.segnet.state_dict()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path):
    # checkpoints carry numpy RNG states, so full unpickling is needed
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a structgan checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    config = parse_config_text(blob["config"], source=f"{path}:config")
    if config_hash(config) != blob["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    return blob, config


def load_train_state(path, edge_detector=None, perceptual=None):
    blob, config = read_checkpoint(path)
    segnet = None
    if "segnet" in blob:
        segnet = SegNet(**blob["segnet"]["config"])
        segnet.load_state_dict(blob["segnet"]["state_dict"])
        freeze(segnet)
    state = build_train_state(config, seed=blob["seed"], segnet=segnet,
                              edge_detector=edge_detector, perceptual=perceptual)
    for name in ("G_A2B", "G_B2A", "D_A", "D_B", "opt_G", "opt_D"):
        getattr(state, name).load_state_dict(blob[name])
    state.pool_A.set_state(blob["pool_A"])
    state.pool_B.set_state(blob["pool_B"])
    state.epoch = blob["epoch"]
    state.step = blob["step"]
    torch.set_rng_state(blob["torch_rng"])
    return state, blob.get("extra", {})


def load_generator(path, direction="A2B"):
    """Rebuild one generator from a checkpoint, in eval mode."""
    if direction not in ("A2B", "B2A"):
        raise ValueError("direction must be 'A2B' or 'B2A'")
    blob, _ = read_checkpoint(path)
    net = build_transformer(TransformerSpec(**blob["transformer_spec"]))
    net.load_state_dict(blob[f"G_{direction}"])
    net.eval()
    return net


# ---------------------------------------------------------------------------
# training loop


def _item(dataset, index):
    if isinstance(dataset, UnpairedDataset):
        return dataset.load(index)
    return dataset[index]


def _batches(pairs, size):
    for i in range(0, len(pairs), size):
        yield pairs[i:i + size]


@dataclass
class TrainResult:
    state: TrainState
    checkpoints: list
    metrics_path: Path
    last_report: LossReport = None


def train(config: ExperimentConfig, dataset_a, dataset_b, out_dir, seed=0, resume=None,
          checkpoint_every=None, max_steps=None, segnet=None, edge_detector=None,
          perceptual=None, stop_after_epoch=None) -> TrainResult:
    """Run ``n_iter + n_iter_decay`` epochs of training.

    An epoch visits every image of the smaller domain once. The learning rate
    is set from the schedule at the start of each epoch. A checkpoint is
    written every ``checkpoint_every`` epochs (default ``n_iter``) and after
    the final epoch; one metrics row per step is appended to
    ``out_dir/metrics.csv``. ``resume`` continues from a checkpoint written
    by this function with the same datasets.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_epochs = config.n_iter + config.n_iter_decay
    checkpoint_every = checkpoint_every or config.n_iter

    if resume is not None:
        state, extra = load_train_state(resume, edge_detector=edge_detector, perceptual=perceptual)
        config = state.config
        seed = state.seed
    else:
        state = build_train_state(config, seed=seed, segnet=segnet,
                                  edge_detector=edge_detector, perceptual=perceptual)
        extra = {}
    sampler = EpochSampler(len(dataset_a), len(dataset_b), np.random.default_rng(seed + 1000))
    crop_rng = np.random.default_rng(seed + 2000)
    if "sampler" in extra:
        sampler.set_state(extra["sampler"])
        crop_rng.bit_generator.state = extra["crop_rng"]

    metrics_path = out_dir / "metrics.csv"
    new_file = not metrics_path.exists() or resume is None
    fh = open(metrics_path, "w" if resume is None else "a", newline="")
    writer = csv.DictWriter(fh, fieldnames=["epoch", "step", "lr", *REPORT_FIELDS])
    if new_file:
        writer.writeheader()

    checkpoints = []
    report = None
    try:
        for epoch in range(state.epoch, total_epochs):
            lr = learning_rate_at(config.schedule, epoch)
            set_learning_rate(state, lr)
            for chunk in _batches(sampler.epoch(), config.batch_size):
                a = torch.stack([preprocess(_item(dataset_a, i), config.load_size,
                                            config.crop_size, crop_rng, config.flip)
                                 for i, _ in chunk])
                b = torch.stack([preprocess(_item(dataset_b, j), config.load_size,
                                            config.crop_size, crop_rng, config.flip)
                                 for _, j in chunk])
                try:
                    _, report = train_step(state, a, b)
                except TrainingDivergedError as exc:
                    log.error("training diverged at epoch %d step %d: %s",
                              epoch, state.step, exc.report.row())
                    raise
                writer.writerow({"epoch": epoch, "step": state.step, "lr": lr, **report.row()})
                if max_steps is not None and state.step >= max_steps:
                    break
            fh.flush()
            state.epoch = epoch + 1
            log.info("epoch %d/%d done, step %d, lr %.3g", state.epoch, total_epochs,
                     state.step, lr)
            done = state.epoch == total_epochs or (max_steps is not None and state.step >= max_steps)
            if state.epoch % checkpoint_every == 0 or done:
                extra = {"sampler": sampler.state(), "crop_rng": crop_rng.bit_generator.state}
                path = out_dir / f"checkpoint_epoch{state.epoch:04d}.pt"
                checkpoints.append(save_checkpoint(state, path, extra))
            if done or (stop_after_epoch is not None and state.epoch >= stop_after_epoch):
                break
    finally:
        fh.close()
    return TrainResult(state, checkpoints, metrics_path, report)


def checksum_generators(state: TrainState):
    return [parameter_checksum(g) for g in state.generators()]


def checksum_discriminators(state: TrainState):
    return [parameter_checksum(d) for d in state.discriminators()]

