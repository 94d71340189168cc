"""Experiment configuration, named presets and the learning-rate schedule.

Config files are flat ``key = value`` text with ``#`` comments::

    preset = cycle+edge
    crop_size = 256x256
    load_size = 512x288
    lambda_ep_afb = 100

Keys not present in the file fall back to the preset (``cycle`` when no
preset is named).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

PAIR_TAGS = ("afb", "bfa", "farb", "fbra")
GENERATOR_ARCHS = ("resnet-blocks", "fcdensenet")
PERCEPTUAL_MODES = ("multi-layer", "last-layer", "analytic-stub")
EDGE_DETECTORS = ("sobel", "hed")

MAX_SCALES = 8


class ConfigError(ValueError):
    """Raised for malformed config files or invariant violations."""


class UnknownPresetError(KeyError):
    pass


def _weights(**kw):
    out = {tag: 0.0 for tag in PAIR_TAGS}
    out.update({k: float(v) for k, v in kw.items()})
    return out


def scales_for_crop(crop_side: int) -> int:
    """Number of FC-DenseNet downsampling levels for a square crop side.

    The largest ``s`` such that ``crop_side`` is divisible by ``2**s``,
    capped at 8 levels.
    """
    crop_side = int(crop_side)
    if crop_side < 4:
        raise ValueError(f"crop side must be >= 4, got {crop_side}")
    if crop_side % 2:
        raise ValueError(f"crop side {crop_side} has no factor of 2")
    s = 0
    while crop_side % (2 ** (s + 1)) == 0 and s < MAX_SCALES:
        s += 1
    return s


@dataclass(frozen=True)
class LrSchedule:
    n_iter: int
    n_iter_decay: int
    base_lr: float


def learning_rate_at(schedule: LrSchedule, epoch: int) -> float:
    """Constant ``base_lr`` for ``n_iter`` epochs, then a linear ramp to 0."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if epoch < schedule.n_iter:
        return schedule.base_lr
    done = epoch - schedule.n_iter
    if done >= schedule.n_iter_decay:
        return 0.0
    return schedule.base_lr * (1.0 - done / schedule.n_iter_decay)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "cycle"
    lambda_cyc_A: float = 10.0
    lambda_cyc_B: float = 10.0
    lambda_p: dict = field(default_factory=_weights)
    lambda_ep: dict = field(default_factory=_weights)
    lambda_ei: dict = field(default_factory=_weights)
    n_iter: int = 100
    n_iter_decay: int = 100
    base_lr: float = 0.0002
    beta1: float = 0.5
    pool_size: int = 50
    load_size: tuple = (256, 256)
    crop_size: tuple = (192, 192)
    generator_arch: str = "fcdensenet"
    n_scales: int = 6
    use_seg_discriminator: bool = False
    seg_classes: int = 5
    perceptual_extractor: str = "analytic-stub"
    # desk-scale knobs outside the presets
    batch_size: int = 1
    growth_rate: int = 12
    layers_per_block: int = 4
    first_channels: int = 16
    ngf: int = 16
    n_res_blocks: int = 6
    ndf: int = 32
    disc_depth: int = 4
    edge_detector: str = "sobel"
    flip: bool = True

    def __post_init__(self):
        for attr in ("lambda_p", "lambda_ep", "lambda_ei"):
            raw = dict(getattr(self, attr) or {})
            unknown = set(raw) - set(PAIR_TAGS)
            if unknown:
                raise ConfigError(f"{attr}: unknown pair tag(s) {sorted(unknown)}")
            object.__setattr__(self, attr, _weights(**raw))
        object.__setattr__(self, "load_size", tuple(int(v) for v in self.load_size))
        object.__setattr__(self, "crop_size", tuple(int(v) for v in self.crop_size))
        self.validate()

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.n_iter, self.n_iter_decay, self.base_lr)

    def weight(self, kind: str, tag: str) -> float:
        return {"p": self.lambda_p, "ep": self.lambda_ep, "ei": self.lambda_ei}[kind][tag]

    def validate(self):
        for key in ("lambda_cyc_A", "lambda_cyc_B"):
            v = getattr(self, key)
            if not v >= 0:
                raise ConfigError(f"{key} must be >= 0, got {v}")
        for attr, kind in (("lambda_p", "p"), ("lambda_ep", "ep"), ("lambda_ei", "ei")):
            for tag, v in getattr(self, attr).items():
                if not v >= 0:
                    raise ConfigError(f"lambda_{kind}_{tag} must be >= 0, got {v}")
        for key in ("n_iter", "n_iter_decay", "n_scales", "seg_classes", "batch_size"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be a positive integer")
        if self.pool_size < 0:
            raise ConfigError("pool_size must be >= 0")
        if not self.base_lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.beta1 < 1:
            raise ConfigError("beta1 must lie in (0, 1)")
        if len(self.load_size) != 2 or len(self.crop_size) != 2:
            raise ConfigError("load_size and crop_size take WIDTHxHEIGHT")
        if any(c > l for c, l in zip(self.crop_size, self.load_size)):
            raise ConfigError(
                f"crop_size {self.crop_size} exceeds load_size {self.load_size}")
        if self.generator_arch not in GENERATOR_ARCHS:
            raise ConfigError(f"generator_arch must be one of {GENERATOR_ARCHS}")
        if self.perceptual_extractor not in PERCEPTUAL_MODES:
            raise ConfigError(f"perceptual_extractor must be one of {PERCEPTUAL_MODES}")
        if self.edge_detector not in EDGE_DETECTORS:
            raise ConfigError(f"edge_detector must be one of {EDGE_DETECTORS}")
        if self.generator_arch == "fcdensenet":
            step = 2 ** self.n_scales
            for side in self.crop_size:
                if side % step or side // step < 1:
                    raise ConfigError(
                        f"n_scales={self.n_scales}: crop side {side} is not a "
                        f"positive multiple of {step}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_PRESETS = {
    "cycle": dict(lambda_cyc_A=10, lambda_cyc_B=10, generator_arch="resnet-blocks"),
    "cycle+pdist": dict(
        lambda_cyc_A=10, lambda_cyc_B=10,
        lambda_p=_weights(afb=0.25, bfa=0.25, farb=0.25, fbra=0.25)),
    "cycle+edge": dict(
        lambda_cyc_A=10, lambda_cyc_B=5,
        lambda_ep=_weights(afb=100, farb=100),
        lambda_ei=_weights(bfa=10, fbra=10)),
}


def preset_names():
    return tuple(_PRESETS)


def builtin_config(name: str) -> ExperimentConfig:
    """Return a built-in parameter set: cycle, cycle+pdist, cycle+edge."""
    try:
        values = _PRESETS[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r}; choose from {sorted(_PRESETS)}") from None
    return ExperimentConfig(name=name, **values)


# file key -> (dataclass attribute, parser)
def _size(text):
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected WIDTHxHEIGHT, got {text!r}")
    return tuple(int(p) for p in parts)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_SCALAR_KEYS = {
    "name": str,
    "lambda_cyc_A": float,
    "lambda_cyc_B": float,
    "n_iter": int,
    "n_iter_decay": int,
    "lr": float,
    "beta1": float,
    "pool_size": int,
    "load_size": _size,
    "crop_size": _size,
    "generator_arch": str,
    "n_scales": int,
    "use_seg_discriminator": _bool,
    "seg_classes": int,
    "perceptual_extractor": str,
    "batch_size": int,
    "growth_rate": int,
    "layers_per_block": int,
    "first_channels": int,
    "ngf": int,
    "n_res_blocks": int,
    "ndf": int,
    "disc_depth": int,
    "edge_detector": str,
    "flip": _bool,
}
_ATTR_FOR_KEY = {"lr": "base_lr"}


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = (lineno, value)

    preset = entries.pop("preset", (0, "cycle"))[1]
    try:
        base = builtin_config(preset)
    except UnknownPresetError as exc:
        raise ConfigError(f"{source}: preset: {exc.args[0]}") from None

    changes = {}
    lambdas = {"p": dict(base.lambda_p), "ep": dict(base.lambda_ep), "ei": dict(base.lambda_ei)}
    for key, (lineno, value) in entries.items():
        where = f"{source}:{lineno}: {key}"
        if key.startswith("lambda_") and key.count("_") == 2 and not key.startswith("lambda_cyc"):
            _, kind, tag = key.split("_")
            if kind not in lambdas or tag not in PAIR_TAGS:
                raise ConfigError(f"{where}: unknown weight key")
            try:
                lambdas[kind][tag] = float(value)
            except ValueError:
                raise ConfigError(f"{where}: not a number: {value!r}") from None
            continue
        if key not in _SCALAR_KEYS:
            raise ConfigError(f"{where}: unknown key")
        try:
            parsed = _SCALAR_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        changes[_ATTR_FOR_KEY.get(key, key)] = parsed

    changes.update(lambda_p=lambdas["p"], lambda_ep=lambdas["ep"], lambda_ei=lambdas["ei"])
    arch = changes.get("generator_arch", base.generator_arch)
    if "n_scales" not in changes and arch == "fcdensenet":
        crop = changes.get("crop_size", base.crop_size)
        try:
            changes["n_scales"] = min(scales_for_crop(side) for side in crop)
        except ValueError as exc:
            raise ConfigError(f"{source}: crop_size: {exc}") from None
    try:
        return base.replace(**changes)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def serialize_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config_text`; every field is written explicitly."""
    lines = [f"preset = {config.name if config.name in _PRESETS else 'cycle'}"]
    for key, parser in _SCALAR_KEYS.items():
        value = getattr(config, _ATTR_FOR_KEY.get(key, key))
        if parser is _size:
            value = f"{value[0]}x{value[1]}"
        elif parser is _bool:
            value = "true" if value else "false"
        elif parser is float:
            value = repr(float(value))
        lines.append(f"{key} = {value}")
    for kind in ("p", "ep", "ei"):
        for tag in PAIR_TAGS:
            lines.append(f"lambda_{kind}_{tag} = {config.weight(kind, tag)!r}")
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:16]
