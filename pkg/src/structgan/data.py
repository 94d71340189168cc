"""Unpaired image folders, load/crop preprocessing, and synthetic paired data.

Directory layout::

    root/trainA  root/trainB  root/testA  root/testB  [root/pairs.csv]

By convention domain A holds degraded images and domain B clean ones.
``pairs.csv`` (``pair_id,clean_path,degraded_path``, paths relative to
``root``) exists only for synthetic validation sets and is read by the
evaluation code, never by training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
CORRUPTIONS = ("fog", "night", "rain")
SCENE_CLASSES = ("sky", "road", "building", "tree", "car")


class DatasetError(RuntimeError):
    pass


def _decode(path: Path) -> Image.Image:
    try:
        with Image.open(path) as im:
            im.load()
            return im.convert("RGB")
    except Exception as exc:  # PIL raises a zoo of exception types
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc


@dataclass(frozen=True)
class UnpairedDataset:
    root: Path
    domain: str
    items: tuple

    def __len__(self):
        return len(self.items)

    def load(self, index) -> Image.Image:
        return _decode(self.items[index])

    @classmethod
    def from_folder(cls, folder, domain="A", verify=True):
        folder = Path(folder)
        if not folder.is_dir():
            raise DatasetError(f"{folder} is not a directory")
        items = tuple(sorted(p for p in folder.iterdir()
                             if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()))
        if not items:
            raise DatasetError(f"{folder} contains no PNG/JPEG images")
        if verify:
            for p in items:
                _decode(p)
        return cls(folder, domain, items)


def load_unpaired_dataset(root, domain, split="train", verify=True) -> UnpairedDataset:
    """Images of ``root/{split}{domain}`` in lexicographic order.

    Every file is decoded once up front so a corrupt file fails immediately.
    """
    if domain not in ("A", "B"):
        raise ValueError(f"domain must be 'A' or 'B', got {domain!r}")
    return UnpairedDataset.from_folder(Path(root) / f"{split}{domain}", domain, verify)


def preprocess(image, load_size, crop_size, rng, flip=True):
    """Resize to ``load_size`` (w, h), random-crop ``crop_size`` (w, h), scale to [-1, 1].

    ``image`` is a PIL image or an ``(H, W, 3)`` uint8 array. With ``flip`` a
    horizontal flip is applied with probability 1/2.
    """
    lw, lh = load_size
    cw, ch = crop_size
    if cw > lw or ch > lh:
        raise ValueError(f"crop {cw}x{ch} exceeds load size {lw}x{lh}")
    if not isinstance(image, Image.Image):
        image = Image.fromarray(np.asarray(image, dtype=np.uint8))
    image = image.convert("RGB")
    if image.size != (lw, lh):
        image = image.resize((lw, lh), Image.BILINEAR)
    arr = np.asarray(image, dtype=np.float32)
    x0 = int(rng.integers(0, lw - cw + 1))
    y0 = int(rng.integers(0, lh - ch + 1))
    arr = arr[y0:y0 + ch, x0:x0 + cw]
    if flip and rng.random() < 0.5:
        arr = arr[:, ::-1]
    t = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)
    return t / 127.5 - 1.0


def to_tensor(image) -> torch.Tensor:
    """PIL image or uint8 array -> (3, H, W) float tensor in [-1, 1], no resizing."""
    arr = np.asarray(image.convert("RGB") if isinstance(image, Image.Image) else image,
                     dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1) / 127.5 - 1.0


def to_uint8(tensor) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] -> (H, W, 3) uint8 array."""
    arr = ((tensor.detach().clamp(-1, 1) + 1) * 127.5).round()
    return arr.permute(1, 2, 0).cpu().numpy().astype(np.uint8)


class EpochSampler:
    """Index pairs for one epoch of unpaired training.

    The smaller domain is visited once per epoch in shuffled order; the larger
    domain is drawn without replacement from a queue that is refilled with a
    fresh permutation when exhausted.
    """

    def __init__(self, n_a, n_b, rng):
        if n_a < 1 or n_b < 1:
            raise DatasetError("both domains need at least one image")
        self.n_a, self.n_b = n_a, n_b
        self.rng = rng
        self._queue = []

    @property
    def epoch_length(self):
        return min(self.n_a, self.n_b)

    def _draw_large(self, n_large):
        if not self._queue:
            self._queue = [int(i) for i in self.rng.permutation(n_large)]
        return self._queue.pop()

    def epoch(self):
        small_a = self.n_a <= self.n_b
        n_small, n_large = (self.n_a, self.n_b) if small_a else (self.n_b, self.n_a)
        order = [int(i) for i in self.rng.permutation(n_small)]
        pairs = []
        for i in order:
            j = self._draw_large(n_large)
            pairs.append((i, j) if small_a else (j, i))
        return pairs

    def state(self):
        return {"rng": self.rng.bit_generator.state, "queue": list(self._queue)}

    def set_state(self, state):
        self.rng.bit_generator.state = state["rng"]
        self._queue = list(state["queue"])


# ---------------------------------------------------------------------------
# synthetic scenes and corruptions


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ValueError(f"corruption kind must be one of {CORRUPTIONS}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0, 1], got {self.severity}")


def procedural_scene(rng, size=64):
    """A toy street scene and its multi-hot class maps.

    Returns ``(image, labels)``: float ``(H, W, 3)`` in [0, 1] and bool
    ``(K, H, W)`` ordered as :data:`SCENE_CLASSES`. Tree crowns overlap
    buildings, so some pixels carry two labels.
    """
    h = w = size
    img = np.zeros((h, w, 3))
    labels = np.zeros((len(SCENE_CLASSES), h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    horizon = int(rng.integers(int(0.35 * h), int(0.55 * h)))

    sky_top = rng.uniform(0.45, 0.75, 3) * np.array([0.7, 0.85, 1.0])
    sky_bot = np.clip(sky_top + 0.2, 0, 1)
    t = (yy / max(horizon, 1))[..., None]
    sky = (1 - t) * sky_top + t * sky_bot
    img[:] = sky
    labels[0] = yy < horizon

    ground = rng.uniform(0.25, 0.45) * np.ones(3)
    road_half = (yy - horizon + 1) * rng.uniform(0.5, 0.9)
    road = (yy >= horizon) & (np.abs(xx - w / 2) <= road_half)
    img[yy >= horizon] = ground * 1.4
    img[road] = ground * 0.7
    labels[1] = road
    lane = road & (np.abs(xx - w / 2) < 0.6) & ((yy // 3) % 2 == 0)
    img[lane] = 0.9

    for _ in range(int(rng.integers(2, 5))):
        bw = int(rng.integers(w // 8, w // 3))
        bh = int(rng.integers(h // 6, horizon + 1))
        x0 = int(rng.integers(0, w - bw))
        mask = (xx >= x0) & (xx < x0 + bw) & (yy >= horizon - bh) & (yy < horizon)
        img[mask] = rng.uniform(0.2, 0.8, 3)
        labels[2] |= mask
        labels[0] &= ~mask
        # windows
        win = mask & ((xx - x0) % 4 == 1) & ((yy - horizon) % 5 == 2)
        img[win] = rng.uniform(0.6, 1.0)

    for _ in range(int(rng.integers(1, 4))):
        cx = rng.uniform(0, w)
        cy = horizon - rng.uniform(0, h / 6)
        r = rng.uniform(h / 12, h / 6)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        img[mask] = np.array([0.1, rng.uniform(0.35, 0.6), 0.1])
        labels[3] |= mask
        labels[0] &= ~mask

    for _ in range(int(rng.integers(1, 3))):
        cw_, ch_ = int(rng.integers(w // 10, w // 5)), int(rng.integers(h // 14 + 1, h // 8 + 2))
        cy = int(rng.integers(horizon + 2, h - ch_))
        cx = int(np.clip(w / 2 + rng.uniform(-0.3, 0.3) * w, 0, w - cw_))
        mask = (xx >= cx) & (xx < cx + cw_) & (yy >= cy) & (yy < cy + ch_)
        img[mask] = rng.uniform(0.0, 1.0, 3)
        labels[4] |= mask
        labels[1] &= ~mask
    return np.clip(img, 0, 1), labels


def fog_alpha(height, severity):
    """Per-row blend weight toward white: ``severity`` at the top, 0 at the bottom."""
    depth = 1.0 - np.arange(height) / max(height - 1, 1)
    return severity * depth


def corrupt(image, spec: CorruptionSpec, rng=None):
    """Apply a corruption to a float ``(H, W, 3)`` image in [0, 1]."""
    if spec.severity == 0:
        return image.copy()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    s = spec.severity
    h, w, _ = image.shape
    if spec.kind == "fog":
        a = fog_alpha(h, s)[:, None, None]
        out = (1 - a) * image + a
    elif spec.kind == "night":
        gray = image @ np.array([0.299, 0.587, 0.114])
        collapsed = (1 - s) * image + s * gray[..., None]
        out = 0.9 * collapsed ** (1 + 3 * s) + rng.normal(0, 0.04 * s, image.shape)
    else:
        out = image * (1 - 0.25 * s) + 0.1 * s
        n_streaks = int(round(40 * s * (h * w) / 4096)) + 1
        for _ in range(n_streaks):
            x, y = rng.uniform(0, w), rng.uniform(0, h)
            length = rng.uniform(4, 10) * h / 64
            for t in np.linspace(0, 1, int(length * 2) + 1):
                px, py = int(x + 0.3 * length * t), int(y + length * t)
                if 0 <= px < w and 0 <= py < h:
                    out[py, px] = (1 - 0.6 * s) * out[py, px] + 0.6 * s
    return np.clip(out, 0, 1)


@dataclass
class SyntheticPairs:
    clean: list      # uint8 (H, W, 3) arrays
    degraded: list
    labels: list     # bool (K, H, W) arrays, None for user-supplied bases
    pair_ids: list
    spec: CorruptionSpec


def synthesize_desk_dataset(base_images=None, spec: CorruptionSpec = None, n=8, size=64):
    """Clean/degraded twins from ``base_images`` or from procedural scenes.

    ``base_images`` are ``(H, W, 3)`` uint8 arrays; when omitted, ``n``
    procedural scenes are drawn from ``spec.seed``.
    """
    if spec is None:
        raise ValueError("a CorruptionSpec is required")
    rng = np.random.default_rng(spec.seed)
    if base_images is None:
        if n < 1:
            raise ValueError("n must be >= 1")
        scenes = [procedural_scene(rng, size) for _ in range(n)]
        bases = [img for img, _ in scenes]
        labels = [lab for _, lab in scenes]
    else:
        bases = [np.asarray(b, dtype=np.float64) / 255.0 for b in base_images]
        labels = [None] * len(bases)
    clean, degraded = [], []
    for base in bases:
        c = (base * 255).round().astype(np.uint8)
        d = corrupt(c / 255.0, spec, rng)
        clean.append(c)
        degraded.append((d * 255).round().astype(np.uint8))
    ids = [f"{i:05d}" for i in range(len(bases))]
    return SyntheticPairs(clean, degraded, labels, ids, spec)


def write_desk_dataset(root, train: SyntheticPairs, test: SyntheticPairs, seed=0):
    """Write ``trainA`` (degraded), ``trainB`` (clean), ``testA``/``testB`` and
    ``pairs.csv`` for the test split.

    Training clean images are written under shuffled names so folder order
    carries no pairing.
    """
    root = Path(root)
    for sub in ("trainA", "trainB", "testA", "testB"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    perm = np.random.default_rng(seed).permutation(len(train.clean))
    for pid, img in zip(train.pair_ids, train.degraded):
        Image.fromarray(img).save(root / "trainA" / f"{pid}.png")
    for k, i in enumerate(perm):
        Image.fromarray(train.clean[i]).save(root / "trainB" / f"{k:05d}.png")
    rows = []
    for pid, c, d in zip(test.pair_ids, test.clean, test.degraded):
        Image.fromarray(d).save(root / "testA" / f"{pid}.png")
        Image.fromarray(c).save(root / "testB" / f"{pid}.png")
        rows.append((pid, f"testB/{pid}.png", f"testA/{pid}.png"))
    with open(root / "pairs.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["pair_id", "clean_path", "degraded_path"])
        wr.writerows(rows)
    return root


@dataclass(frozen=True)
class PairedTestset:
    root: Path
    pair_ids: tuple
    clean_paths: tuple
    degraded_paths: tuple

    def __len__(self):
        return len(self.pair_ids)

    def pairs(self):
        """Yield ``(pair_id, degraded, clean)`` tensors in pair-id order."""
        order = sorted(range(len(self.pair_ids)), key=lambda i: self.pair_ids[i])
        for i in order:
            yield (self.pair_ids[i], to_tensor(_decode(self.degraded_paths[i])),
                   to_tensor(_decode(self.clean_paths[i])))


def load_paired_testset(root) -> PairedTestset:
    root = Path(root)
    path = root / "pairs.csv"
    if not path.exists():
        raise DatasetError(f"{root} has no pairs.csv; evaluation needs paired data")
    ids, clean, degraded = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if not row.get("pair_id"):
                raise DatasetError(f"{path}: row without pair_id")
            ids.append(row["pair_id"])
            clean.append(root / row["clean_path"])
            degraded.append(root / row["degraded_path"])
    if not ids:
        raise DatasetError(f"{path} lists no pairs")
    return PairedTestset(root, tuple(ids), tuple(clean), tuple(degraded))
