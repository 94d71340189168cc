"""Frozen feature signals: edge maps, perceptual feature stacks and sigmoid
segmentation maps.

Every extractor here has its parameters frozen; gradients still flow to the
*input image* so the losses can train a generator through them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .losses import FeatureStack
from .networks import FCDenseNet, transform

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def _batched(image):
    if image.dim() == 3:
        return image.unsqueeze(0), True
    if image.dim() == 4:
        return image, False
    raise ValueError(f"expected (C, H, W) or (N, C, H, W), got shape {tuple(image.shape)}")


def to_gray(image):
    """[-1, 1] image batch ``(N, C, H, W)`` -> [0, 1] luminance ``(N, 1, H, W)``."""
    x = (image + 1) / 2
    c = x.shape[1]
    if c == 1:
        return x
    if c != 3:
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    w = x.new_tensor(GRAY_WEIGHTS).view(1, 3, 1, 1)
    return (x * w).sum(1, keepdim=True)


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4


def analytic_edge_oracle(image, gain=3.0, eps=1e-3):
    """Sobel edge strength in [0, 1], smooth in the input.

    Grayscale conversion, 3x3 Sobel with replicated borders, a smoothed
    gradient magnitude ``s / sqrt(s + eps^2)`` with ``s = gx^2 + gy^2`` (exactly
    zero on flat regions, differentiable at zero) and ``tanh`` saturation. A
    unit luminance step gives roughly ``tanh(gain)``.
    """
    x, single = _batched(image)
    g = F.pad(to_gray(x), (1, 1, 1, 1), mode="replicate")
    kx = _SOBEL_X.to(g).view(1, 1, 3, 3)
    ky = kx.transpose(-1, -2)
    gx = F.conv2d(g, kx)
    gy = F.conv2d(g, ky)
    sq = gx * gx + gy * gy
    mag = sq / torch.sqrt(sq + eps * eps)
    edges = torch.tanh(gain * mag).clamp(0, 1)[:, 0]
    return edges[0] if single else edges


def _imagenet_norm(x):
    if x.shape[1] == 1:
        x = x.expand(-1, 3, -1, -1)
    x = (x + 1) / 2
    mean = x.new_tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = x.new_tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (x - mean) / std


class HEDResidual(nn.Module):
    """Holistically-nested edge detector on ResNet-34 feature stages.

    One 1x1 side output per stage (stem, layer1..layer4), bilinearly
    upsampled to the input size and fused by a 1x1 convolution.
    """

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet34

        r = resnet34(weights=None)
        self.stem = nn.Sequential(r.conv1, r.bn1, r.relu)
        self.pool = r.maxpool
        self.stages = nn.ModuleList([r.layer1, r.layer2, r.layer3, r.layer4])
        self.sides = nn.ModuleList(nn.Conv2d(c, 1, 1) for c in (64, 64, 128, 256, 512))
        self.fuse = nn.Conv2d(5, 1, 1)

    def forward(self, x):
        size = x.shape[-2:]
        h = self.stem(_imagenet_norm(x))
        outs = [h]
        h = self.pool(h)
        for stage in self.stages:
            h = stage(h)
            outs.append(h)
        sides = [F.interpolate(side(o), size=size, mode="bilinear", align_corners=False)
                 for side, o in zip(self.sides, outs)]
        return torch.sigmoid(self.fuse(torch.cat(sides, 1)))[:, 0]


def _load_state(module, weights):
    if isinstance(weights, (str, Path)):
        weights = torch.load(weights, map_location="cpu", weights_only=True)
    if isinstance(weights, dict) and "state_dict" in weights:
        weights = weights["state_dict"]
    module.load_state_dict(weights)
    return module


class EdgeDetector:
    """Edge-map producer: ``"analytic-sobel"`` or ``"hed-residual"``.

    The residual detector needs externally trained weights (a state dict or a
    path to one saved with ``torch.save``).
    """

    def __init__(self, backbone="analytic-sobel", weights=None, gain=3.0):
        aliases = {"sobel": "analytic-sobel", "hed": "hed-residual"}
        backbone = aliases.get(backbone, backbone)
        if backbone not in ("analytic-sobel", "hed-residual"):
            raise ValueError(f"unknown edge detector backbone {backbone!r}")
        self.backbone = backbone
        self.gain = gain
        self.net = None
        if backbone == "hed-residual" and weights is not None:
            self.net = freeze(_load_state(HEDResidual(), weights))

    def __call__(self, image):
        return detect_edges(image, self)

    def checksum(self):
        return parameter_checksum(self.net) if self.net is not None else "analytic"


def detect_edges(image, detector: EdgeDetector):
    if detector.backbone == "analytic-sobel":
        return analytic_edge_oracle(image, gain=detector.gain)
    if detector.net is None:
        raise RuntimeError("hed-residual edge detector has no weights loaded")
    x, single = _batched(image)
    edges = detector.net(x).clamp(0, 1)
    return edges[0] if single else edges


class StubPyramid(nn.Module):
    """Fixed random-weight convolutional pyramid (conv3x3 + tanh per level,
    2x average pooling between levels)."""

    def __init__(self, in_channels=3, widths=(8, 16, 32, 32), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.levels = nn.ModuleList()
        ch = in_channels
        for w in widths:
            conv = nn.Conv2d(ch, w, 3, padding=1)
            with torch.no_grad():
                bound = (3.0 / (ch * 9)) ** 0.5
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen) * 2 - 1) * bound)
                conv.bias.copy_((torch.rand(conv.bias.shape, generator=gen) * 2 - 1) * 0.1)
            self.levels.append(conv)
            ch = w

    def forward(self, x):
        taps = []
        for i, conv in enumerate(self.levels):
            if i:
                x = F.avg_pool2d(x, 2)
            x = torch.tanh(conv(x))
            taps.append(x)
        return taps


class VGGTaps(nn.Module):
    """VGG-19 convolutional trunk; taps are the activations entering each max-pool."""

    def __init__(self):
        super().__init__()
        from torchvision.models import vgg19

        self.features = vgg19(weights=None).features
        self.tap_after = [i - 1 for i, m in enumerate(self.features) if isinstance(m, nn.MaxPool2d)]

    def forward(self, x):
        x = _imagenet_norm(x)
        taps = []
        last = self.tap_after[-1]
        for i, m in enumerate(self.features):
            x = m(x)
            if i in self.tap_after:
                taps.append(x)
            if i == last:
                break
        return taps


class ResNetLastLayer(nn.Module):
    """ResNet-34 trunk up to the last convolutional stage."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet34

        r = resnet34(weights=None)
        self.trunk = nn.Sequential(r.conv1, r.bn1, r.relu, r.maxpool,
                                   r.layer1, r.layer2, r.layer3, r.layer4)

    def forward(self, x):
        return [self.trunk(_imagenet_norm(x))]


class PerceptualExtractor:
    """Frozen feature pyramid used for perceptual distances.

    ``mode``:
      * ``"multi-layer"``: VGG-19, five taps (one before each max-pool)
      * ``"last-layer"``: ResNet-34, last convolutional stage only
      * ``"analytic-stub"``: small fixed-random pyramid seeded by ``seed``

    ``weights`` optionally supplies pretrained parameters for the torchvision
    trunks; without them the trunks keep a seeded random initialisation.
    ``in_channels`` and ``widths`` shape the stub pyramid only.
    """

    def __init__(self, mode="analytic-stub", layer_weights=None, weights=None, seed=0,
                 in_channels=3, widths=(8, 16, 32, 32)):
        self.mode = mode
        self.seed = seed
        if mode == "analytic-stub":
            net = StubPyramid(in_channels, tuple(widths), seed=seed)
            n_taps, min_size = len(widths), 2 ** (len(widths) - 1)
        elif mode == "multi-layer":
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                net = VGGTaps()
            n_taps, min_size = 5, 16
        elif mode == "last-layer":
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                net = ResNetLastLayer()
            n_taps, min_size = 1, 32
        else:
            raise ValueError(f"unknown perceptual extractor mode {mode!r}")
        if weights is not None:
            _load_state(net, weights)
        self.net = freeze(net)
        self.min_size = min_size
        if layer_weights is None:
            layer_weights = [1.0 / n_taps] * n_taps
        layer_weights = [float(w) for w in layer_weights]
        if len(layer_weights) != n_taps:
            raise ValueError(f"{mode} produces {n_taps} layers, got {len(layer_weights)} weights")
        if any(w < 0 for w in layer_weights) or sum(layer_weights) <= 0:
            raise ValueError("layer weights must be nonnegative with a positive sum")
        self.layer_weights = layer_weights

    @property
    def equal_weights(self):
        return len(set(self.layer_weights)) == 1

    def __call__(self, image):
        return extract_perceptual_features(image, self)

    def checksum(self):
        return parameter_checksum(self.net)


def extract_perceptual_features(image, extractor: PerceptualExtractor) -> FeatureStack:
    x, _ = _batched(image)
    h, w = x.shape[-2:]
    if min(h, w) < extractor.min_size:
        raise ValueError(
            f"{extractor.mode} extractor needs images of at least "
            f"{extractor.min_size}x{extractor.min_size}, got {h}x{w}")
    maps = extractor.net(x)
    return FeatureStack(maps=list(maps), weights=list(extractor.layer_weights))


class SegNet(nn.Module):
    """FC-DenseNet segmenter with one independent sigmoid per class."""

    def __init__(self, n_classes=5, in_channels=3, n_scales=3, growth_rate=8,
                 layers_per_block=2, first_channels=16):
        super().__init__()
        self.n_classes = n_classes
        self.in_channels = in_channels
        self.body = FCDenseNet(in_channels, n_classes, n_scales, growth_rate,
                               layers_per_block, first_channels, head="sigmoid")
        self.size_multiple = self.body.size_multiple
        self.config = dict(n_classes=n_classes, in_channels=in_channels, n_scales=n_scales,
                           growth_rate=growth_rate, layers_per_block=layers_per_block,
                           first_channels=first_channels)

    def forward(self, x):
        return self.body(x)


def segment(image, segnet: SegNet):
    """Per-class sigmoid maps ``(K, H, W)`` (or ``(N, K, H, W)``) at input resolution."""
    x, single = _batched(image)
    if x.shape[1] != segnet.in_channels:
        raise ValueError(
            f"segmentation network expects {segnet.in_channels} channels, got {x.shape[1]}")
    out = transform(segnet, x, pad=True)
    return out[0] if single else out


def train_segmenter(segnet: SegNet, images, labels, steps=200, lr=2e-3, seed=0):
    """Briefly fit ``segnet`` to multi-hot label maps, then freeze it.

    ``images``: ``(N, 3, H, W)`` in [-1, 1]; ``labels``: ``(N, K, H, W)`` in {0, 1}.
    """
    gen = np.random.default_rng(seed)
    segnet.train()
    opt = torch.optim.Adam(segnet.parameters(), lr=lr)
    n = images.shape[0]
    for _ in range(steps):
        idx = torch.as_tensor(gen.choice(n, size=min(4, n), replace=False))
        pred = segnet(images[idx])
        loss = F.binary_cross_entropy(pred.clamp(1e-6, 1 - 1e-6), labels[idx].float())
        opt.zero_grad()
        loss.backward()
        opt.step()
    return freeze(segnet)


def save_segnet(segnet: SegNet, path):
    torch.save({"config": segnet.config, "state_dict": segnet.state_dict()}, path)


def load_segnet(path) -> SegNet:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    net = SegNet(**blob["config"])
    net.load_state_dict(blob["state_dict"])
    return freeze(net)
