"""Generators (FC-DenseNet with sub-pixel upsampling, residual blocks) and
patch discriminators."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import GENERATOR_ARCHS, ExperimentConfig, scales_for_crop  # noqa: F401


def subpixel_upsample(x, r: int):
    """Periodic shuffle ``(..., C*r*r, H, W) -> (..., C, H*r, W*r)``.

    ``out[c, h*r + i, w*r + j] = x[c*r*r + i*r + j, h, w]``.
    """
    r = int(r)
    if r < 1:
        raise ValueError("upscale factor must be >= 1")
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channel count {c} is not divisible by r^2 = {r * r}")
    oc = c // (r * r)
    y = x.reshape(*lead, oc, r, r, h, w)
    n = len(lead)
    # (..., oc, i, j, h, w) -> (..., oc, h, i, w, j)
    y = y.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return y.reshape(*lead, oc, h * r, w * r)


def subpixel_downsample(x, r: int):
    """Inverse of :func:`subpixel_upsample`."""
    r = int(r)
    *lead, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"spatial size {h}x{w} is not divisible by {r}")
    n = len(lead)
    y = x.reshape(*lead, c, h // r, r, w // r, r)
    y = y.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return y.reshape(*lead, c * r * r, h // r, w // r)


class SubPixelUp(nn.Module):
    """Convolution to ``4 * out_ch`` channels followed by a 2x periodic shuffle."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch * 4, 3, padding=1)

    def forward(self, x):
        return subpixel_upsample(self.conv(x), 2)


def _norm(ch):
    # layer-style norm: well defined at 1x1 bottlenecks and for batch size 1
    return nn.GroupNorm(1, ch)


class DenseLayer(nn.Sequential):
    def __init__(self, in_ch, growth):
        super().__init__(_norm(in_ch), nn.ReLU(inplace=False),
                         nn.Conv2d(in_ch, growth, 3, padding=1))


class DenseBlock(nn.Module):
    """``n_layers`` densely connected layers.

    Returns the concatenation of input and new features, or only the new
    features when ``keep_input`` is False (up path and bottleneck).
    """

    def __init__(self, in_ch, growth, n_layers, keep_input=True):
        super().__init__()
        self.layers = nn.ModuleList(
            DenseLayer(in_ch + i * growth, growth) for i in range(n_layers))
        self.keep_input = keep_input
        self.out_channels = (in_ch if keep_input else 0) + n_layers * growth

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, 1)))
        if self.keep_input:
            return torch.cat(feats, 1)
        return torch.cat(feats[1:], 1)


class TransitionDown(nn.Sequential):
    def __init__(self, ch):
        super().__init__(_norm(ch), nn.ReLU(inplace=False),
                         nn.Conv2d(ch, ch, 3, stride=2, padding=1))


class FCDenseNet(nn.Module):
    """Tiramisu-style encoder/decoder with sub-pixel transitions up.

    ``n_scales`` strided-convolution levels down, a dense bottleneck, and
    ``n_scales`` sub-pixel levels up with skip concatenation. The head maps to
    ``out_channels`` followed by ``head`` ("tanh", "sigmoid" or None).
    """

    def __init__(self, in_channels=3, out_channels=3, n_scales=5, growth_rate=12,
                 layers_per_block=4, first_channels=16, head="tanh"):
        super().__init__()
        self.n_scales = n_scales
        self.stem = nn.Conv2d(in_channels, first_channels, 3, padding=1)
        ch = first_channels
        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        skip_ch = []
        for _ in range(n_scales):
            block = DenseBlock(ch, growth_rate, layers_per_block)
            self.down_blocks.append(block)
            ch = block.out_channels
            skip_ch.append(ch)
            self.downs.append(TransitionDown(ch))
        self.bottleneck = DenseBlock(ch, growth_rate, layers_per_block, keep_input=False)
        ch = self.bottleneck.out_channels
        self.ups = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for level in reversed(range(n_scales)):
            up_ch = layers_per_block * growth_rate
            self.ups.append(SubPixelUp(ch, up_ch))
            block = DenseBlock(up_ch + skip_ch[level], growth_rate, layers_per_block,
                               keep_input=level == 0)
            self.up_blocks.append(block)
            ch = block.out_channels
        self.head = nn.Conv2d(ch, out_channels, 1)
        self.activation = {"tanh": torch.tanh, "sigmoid": torch.sigmoid, None: None}[head]

    @property
    def size_multiple(self):
        return 2 ** self.n_scales

    def encode(self, x):
        x = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downs):
            x = block(x)
            skips.append(x)
            x = down(x)
        return self.bottleneck(x), skips

    def forward(self, x):
        x, skips = self.encode(x)
        for up, block, skip in zip(self.ups, self.up_blocks, reversed(skips)):
            x = block(torch.cat([up(x), skip], 1))
        x = self.head(x)
        return self.activation(x) if self.activation is not None else x


class ResnetBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), nn.InstanceNorm2d(ch))

    def forward(self, x):
        return x + self.body(x)


class ResnetGenerator(nn.Module):
    """Two stride-2 downsamplings, residual blocks, two transposed-conv upsamplings."""

    size_multiple = 4

    def __init__(self, in_channels=3, out_channels=3, ngf=16, n_blocks=6):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_channels, ngf, 7),
                  nn.InstanceNorm2d(ngf), nn.ReLU(True)]
        ch = ngf
        for _ in range(2):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1),
                       nn.InstanceNorm2d(ch * 2), nn.ReLU(True)]
            ch *= 2
        layers += [ResnetBlock(ch) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1,
                                          output_padding=1),
                       nn.InstanceNorm2d(ch // 2), nn.ReLU(True)]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, out_channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


@dataclass(frozen=True)
class TransformerSpec:
    arch: str = "fcdensenet"
    n_scales: int = 6
    growth_rate: int = 12
    layers_per_block: int = 4
    first_channels: int = 16
    ngf: int = 16
    n_res_blocks: int = 6
    io_channels: int = 3

    def __post_init__(self):
        if self.arch not in GENERATOR_ARCHS:
            raise ValueError(f"arch must be one of {GENERATOR_ARCHS}, got {self.arch!r}")
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")

    @classmethod
    def from_config(cls, config: ExperimentConfig):
        return cls(arch=config.generator_arch, n_scales=config.n_scales,
                   growth_rate=config.growth_rate, layers_per_block=config.layers_per_block,
                   first_channels=config.first_channels, ngf=config.ngf,
                   n_res_blocks=config.n_res_blocks)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_channels: int = 3
    depth: int = 4
    ndf: int = 32

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("discriminator depth must be >= 1")

    def to_dict(self):
        return asdict(self)


def build_transformer(spec: TransformerSpec, crop_size=None) -> nn.Module:
    """Build a generator; ``crop_size`` (w, h) is checked against the scale count."""
    if crop_size is not None and spec.arch == "fcdensenet":
        step = 2 ** spec.n_scales
        for side in crop_size:
            if side % step:
                raise ValueError(f"crop side {side} is not divisible by 2^{spec.n_scales}")
    if spec.arch == "fcdensenet":
        net = FCDenseNet(spec.io_channels, spec.io_channels, spec.n_scales, spec.growth_rate,
                         spec.layers_per_block, spec.first_channels)
    else:
        net = ResnetGenerator(spec.io_channels, spec.io_channels, spec.ngf, spec.n_res_blocks)
    net.spec = spec
    return net


def transform(net, image, pad=False):
    """Run a generator on an ``(C, H, W)`` image or ``(N, C, H, W)`` batch.

    Sides must be multiples of ``net.size_multiple`` unless ``pad`` is set, in
    which case the input is reflect-padded up to the next multiple and the
    output cropped back.
    """
    single = image.dim() == 3
    x = image.unsqueeze(0) if single else image
    m = net.size_multiple
    h, w = x.shape[-2:]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        if not pad:
            raise ValueError(
                f"input {h}x{w} must have sides divisible by {m} (2^n_scales); "
                "pass pad=True to pad and crop")
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    y = net(x)[..., :h, :w]
    return y[0] if single else y


class PatchDiscriminator(nn.Module):
    """``depth`` stride-2 4x4 convolutions followed by a 3x3 score head."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        layers = []
        ch_in, ch = spec.input_channels, spec.ndf
        for i in range(spec.depth):
            layers.append(nn.Conv2d(ch_in, ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(ch))
            layers.append(nn.LeakyReLU(0.2, True))
            ch_in, ch = ch, min(ch * 2, spec.ndf * 8)
        layers.append(nn.Conv2d(ch_in, 1, 3, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


def build_discriminator(spec: DiscriminatorSpec) -> PatchDiscriminator:
    return PatchDiscriminator(spec)


def discriminate(d: PatchDiscriminator, image, segmaps=None):
    """Score map for an image, with segmentation maps appended as channels.

    Channel order is image channels, then class maps ``0..K-1``.
    """
    expected = d.spec.input_channels
    x = image
    if segmaps is not None:
        if segmaps.shape[-2:] != image.shape[-2:]:
            raise ValueError("segmentation maps must match the image resolution")
        x = torch.cat([image, segmaps], dim=-3)
    if x.shape[-3] != expected:
        extra = "" if segmaps is not None else " (segmentation maps missing?)"
        raise ValueError(
            f"discriminator expects {expected} input channels, got {x.shape[-3]}{extra}")
    single = x.dim() == 3
    out = d(x.unsqueeze(0) if single else x)
    return out[0] if single else out


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
