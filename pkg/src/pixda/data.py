"""Datasets: k-shot selection, a paired-domain toy scene generator, PNG I/O.

The toy generator renders band-plus-sprite scenes at desk scale: frequent
classes fill horizontal bands, rare classes are sprinkled as small squares.
Target-domain images receive a global style shift (hue rotation, noise,
horizon offset) plus per-city tint clusters so the k-shot protocol and the
adversarial alignment have real structure to work with. A fixed quarter of
the source images are drawn with a strong outlier palette, mimicking the
far-from-target samples that source-set pruning is meant to discard.
"""

import colorsys
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

IGNORE_INDEX = 255

SOURCE_OUTLIER_PERIOD = 4  # every 4th source image uses the outlier palette
RARE_SQUARE_DIVISOR = 8  # rare-object square side = min(H, W) // 8
MAX_RARE_COVERAGE = 0.25  # per-class ceiling on rare-square pixel share


@dataclass(frozen=True)
class LabeledImage:
    image: torch.Tensor
    labels: torch.Tensor
    id: str
    city: str | None = None

    def __post_init__(self):
        if self.image.dim() != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {tuple(self.image.shape)}")
        if self.labels.shape != self.image.shape[1:]:
            raise ValueError(
                f"image {tuple(self.image.shape[1:])} and labels "
                f"{tuple(self.labels.shape)} spatial sizes differ"
            )
        if not self.id:
            raise ValueError("id must be a non-empty string")


@dataclass(frozen=True)
class DomainShift:
    hue_shift: float = 0.0
    noise_sigma: float = 0.0
    horizon_offset: float = 0.0
    appearance_jitter: float = 0.0  # per-image hue spread around the city mean, radians


@dataclass(frozen=True)
class ToySceneSpec:
    class_count: int
    class_frequency_targets: tuple
    rare_object_classes: frozenset = frozenset()
    domain_shift: DomainShift = DomainShift()
    image_size: tuple = (32, 32)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_frequency_targets", tuple(self.class_frequency_targets))
        object.__setattr__(self, "rare_object_classes", frozenset(self.rare_object_classes))
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if len(self.class_frequency_targets) != self.class_count:
            raise ValueError(
                f"need {self.class_count} frequency targets, got {len(self.class_frequency_targets)}"
            )
        if any(f <= 0 for f in self.class_frequency_targets):
            raise ValueError("frequency targets must all be positive")
        if not self.rare_object_classes <= set(range(self.class_count)):
            raise ValueError("rare_object_classes must be a subset of the class ids")
        if len(self.rare_object_classes) == self.class_count:
            raise ValueError("at least one class must be non-rare to fill the background")
        h, w = self.image_size
        if h < 8 or w < 8:
            raise ValueError(f"image_size must be at least 8x8, got {self.image_size}")
        total = sum(self.class_frequency_targets)
        side = max(2, min(h, w) // RARE_SQUARE_DIVISOR)
        max_squares = int(MAX_RARE_COVERAGE * h * w / side**2)
        cap = max_squares * side**2 / (h * w)
        for c in sorted(self.rare_object_classes):
            f = self.class_frequency_targets[c] / total
            if f > cap:
                raise ValueError(
                    f"frequency target {f:.3f} for rare class {c} is infeasible: "
                    f"at most {cap:.3f} of the image can be covered by "
                    f"{side}x{side} objects"
                )


def _normalized_freqs(spec):
    total = sum(spec.class_frequency_targets)
    return [f / total for f in spec.class_frequency_targets]


def _band_heights(proportions, total_rows, rng):
    """Jittered largest-remainder split of total_rows, each band >= 1 row."""
    raw = np.array([p * (1 + 0.1 * rng.uniform(-1, 1)) for p in proportions])
    raw = raw / raw.sum() * total_rows
    heights = np.floor(raw).astype(int)
    remainder = total_rows - heights.sum()
    order = np.argsort(-(raw - heights))
    for i in range(remainder):
        heights[order[i % len(heights)]] += 1
    while (heights < 1).any():
        heights[int(np.argmin(heights))] += 1
        heights[int(np.argmax(heights))] -= 1
    return heights


def _hue_rotation_matrix(theta):
    # rotation about the gray axis (1,1,1)/sqrt(3) via Rodrigues' formula
    u = np.full(3, 1 / math.sqrt(3))
    k = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return math.cos(theta) * np.eye(3) + math.sin(theta) * k + (1 - math.cos(theta)) * np.outer(u, u)


def _rotate_hue(img, theta):
    if theta == 0.0:
        return img
    return np.tensordot(_hue_rotation_matrix(theta), img, axes=1)


def _palette(class_count):
    return [
        np.array(colorsys.hsv_to_rgb(c / class_count, 0.55, 0.75)) for c in range(class_count)
    ]


def _render_scene(spec, rng, horizon_shift_rows):
    """Label map plus flat-color image for one scene."""
    h, w = spec.image_size
    freqs = _normalized_freqs(spec)
    band_classes = [c for c in range(spec.class_count) if c not in spec.rare_object_classes]
    labels = np.zeros((h, w), dtype=np.int64)

    heights = _band_heights([freqs[c] for c in band_classes], h, rng)
    if horizon_shift_rows and len(band_classes) > 1:
        shift = int(np.clip(horizon_shift_rows, -(heights[0] - 1), heights[-1] - 1))
        heights[0] += shift
        heights[-1] -= shift
    row = 0
    for c, bh in zip(band_classes, heights):
        labels[row : row + bh] = c
        row += bh

    side = max(2, min(h, w) // RARE_SQUARE_DIVISOR)
    for c in sorted(spec.rare_object_classes):
        target_px = int(round(freqs[c] * h * w))
        attempts = 0
        while (labels == c).sum() < target_px and attempts < 4 * int(
            MAX_RARE_COVERAGE * h * w / side**2
        ):
            y = int(rng.integers(0, h - side + 1))
            x = int(rng.integers(0, w - side + 1))
            labels[y : y + side, x : x + side] = c
            attempts += 1

    colors = _palette(spec.class_count)
    img = np.zeros((3, h, w))
    for c in range(spec.class_count):
        mask = labels == c
        if mask.any():
            img[:, mask] = np.asarray(colors[c])[:, None]
    return img, labels


def _quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _render_image(spec, domain, index, city_index, n_cities):
    rng = np.random.default_rng([spec.seed, 0 if domain == "source" else 1, index])
    shift = spec.domain_shift
    horizon = (
        int(round(shift.horizon_offset * spec.image_size[0])) if domain == "target" else 0
    )
    img, labels = _render_scene(spec, rng, horizon)

    brightness = 1 + 0.1 * rng.uniform(-1, 1)
    img = img * brightness
    img = img + rng.normal(0.0, 0.02, size=img.shape)  # base texture noise

    if domain == "source":
        if index % SOURCE_OUTLIER_PERIOD == SOURCE_OUTLIER_PERIOD - 1:
            img = _rotate_hue(img, math.pi * (1 + 0.1 * rng.uniform(-1, 1)))
            img = img * (0.8 + 0.1 * rng.uniform(-1, 1))
    else:
        city_rng = np.random.default_rng([spec.seed, 2, city_index])
        theta = shift.hue_shift * (1 + 0.25 * city_rng.uniform(-1, 1))
        theta = theta + shift.appearance_jitter * rng.uniform(-1, 1)
        img = _rotate_hue(img, theta)
        img = img * (1 + 0.08 * city_rng.uniform(-1, 1))
        if shift.noise_sigma > 0:
            img = img + rng.normal(0.0, shift.noise_sigma, size=img.shape)

    return _quantize(img), labels


def generate_toy_pair(spec: ToySceneSpec, n_source: int, n_target: int, n_cities: int = 1):
    """Render paired source/target datasets; a pure function of spec and counts.

    Target images are tagged with round-robin synthetic city names and styled
    per city; source images share the single pseudo-city "source".
    """
    if n_source < 1 or n_target < 1:
        raise ValueError("n_source and n_target must be positive")
    if n_cities < 1:
        raise ValueError("n_cities must be positive")
    if n_target % n_cities != 0:
        raise ValueError(f"n_target {n_target} is not divisible by n_cities {n_cities}")

    source = []
    for i in range(n_source):
        img, labels = _render_image(spec, "source", i, 0, n_cities)
        source.append(
            LabeledImage(
                image=torch.tensor(img, dtype=torch.float32),
                labels=torch.tensor(labels, dtype=torch.long),
                id=f"source_{i:06d}_000000",
                city="source",
            )
        )
    target = []
    for i in range(n_target):
        ci = i % n_cities
        img, labels = _render_image(spec, "target", i, ci, n_cities)
        city = f"c{ci:02d}"
        target.append(
            LabeledImage(
                image=torch.tensor(img, dtype=torch.float32),
                labels=torch.tensor(labels, dtype=torch.long),
                id=f"{city}_{i:06d}_000000",
                city=city,
            )
        )
    return source, target


def kshot_select(dataset, k: int, seed: int):
    """Pick exactly k images per distinct city with a seeded uniform draw."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    by_city: dict = {}
    for item in dataset:
        if not item.city:
            raise ValueError(f"image {item.id!r} has no city metadata")
        by_city.setdefault(item.city, []).append(item)
    rng = np.random.default_rng(seed)
    selected = []
    for city in sorted(by_city):
        group = by_city[city]
        if len(group) < k:
            raise ValueError(f"city {city!r} has only {len(group)} images, need k={k}")
        idx = rng.choice(len(group), size=k, replace=False)
        selected.extend(group[int(i)] for i in sorted(idx))
    return selected


def _city_from_stem(stem):
    return stem.split("_")[0]


def load_cityscapes_format(image_dir, label_dir):
    """Load matching PNG stems from two directories into LabeledImages.

    Labels must be single-channel with 255 marking ignored pixels; the city
    tag is the first underscore-separated token of the stem.
    """
    image_dir, label_dir = Path(image_dir), Path(label_dir)
    image_stems = {p.stem: p for p in sorted(image_dir.glob("*.png"))}
    label_stems = {p.stem: p for p in sorted(label_dir.glob("*.png"))}
    if image_stems.keys() != label_stems.keys():
        missing_labels = sorted(image_stems.keys() - label_stems.keys())
        missing_images = sorted(label_stems.keys() - image_stems.keys())
        raise ValueError(
            f"unmatched stems between {image_dir} and {label_dir}: "
            f"images without labels {missing_labels}, labels without images {missing_images}"
        )
    items = []
    for stem in sorted(image_stems):
        img = Image.open(image_stems[stem]).convert("RGB")
        image = torch.tensor(
            np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0, dtype=torch.float32
        )
        lab_img = Image.open(label_stems[stem])
        if lab_img.mode not in ("L", "P", "I", "I;16"):
            raise ValueError(
                f"label {label_stems[stem]} must be single-channel, got mode {lab_img.mode!r}"
            )
        labels = torch.tensor(np.asarray(lab_img, dtype=np.int64))
        if labels.dim() != 2:
            raise ValueError(f"label {label_stems[stem]} is not single-channel")
        items.append(
            LabeledImage(image=image, labels=labels, id=stem, city=_city_from_stem(stem))
        )
    return items


def save_dataset(root, items, meta: dict | None = None):
    """Write images/, labels/ PNG pairs and a meta.json manifest under root."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for item in items:
        arr = (item.image.numpy() * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(root / "images" / f"{item.id}.png")
        lab = item.labels.numpy()
        if lab.min() < 0 or lab.max() > 255:
            raise ValueError(f"labels for {item.id} do not fit single-channel 8-bit PNG")
        Image.fromarray(lab.astype(np.uint8), mode="L").save(root / "labels" / f"{item.id}.png")
    manifest = {"ids": [item.id for item in items], "cities": sorted({i.city for i in items if i.city})}
    if meta:
        manifest.update(meta)
    (root / "meta.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(root):
    """Inverse of save_dataset; returns (items, manifest dict)."""
    root = Path(root)
    items = load_cityscapes_format(root / "images", root / "labels")
    meta_path = root / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return items, meta
