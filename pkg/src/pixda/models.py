"""Segmenter and discriminator networks plus versioned checkpoint I/O.

The segmenter is a desk-scale encoder-decoder standing in for a full
DeepLab-style backbone; its interface (image in, per-pixel logits out) is what
the rest of the pipeline depends on, so larger backbones can be swapped in.
Both discriminators consume the segmenter's softmax output, keeping their
input channel count equal to the class count.
"""

import dataclasses
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT_VERSION = 1

# fixed discriminator layouts
PIXEL_DISC_CHANNELS = (64, 128, 1)
PIXEL_DISC_KERNELS = (3, 3, 1)
PIXEL_DISC_PADDINGS = (1, 1, 0)
IMAGE_DISC_CHANNELS = (64, 128, 256, 512, 1)
IMAGE_DISC_KERNEL = 4
IMAGE_DISC_STRIDE = 2
IMAGE_DISC_MIN_INPUT = 32
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class SegmenterConfig:
    class_count: int
    base_channels: int = 16
    depth: int = 3
    output_stride: int = 2

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.output_stride not in (1, 2, 4):
            raise ValueError(f"output_stride must be 1, 2 or 4, got {self.output_stride}")


def _group_norm(channels):
    return nn.GroupNorm(math.gcd(8, channels), channels)


def _conv_block(c_in, c_out, stride):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        _group_norm(c_out),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1),
        _group_norm(c_out),
        nn.ReLU(inplace=True),
    )


class Segmenter(nn.Module):
    """Configurable encoder producing per-pixel class logits.

    The first log2(output_stride) stages downsample by 2; remaining stages
    keep resolution. A 1x1 head maps to class logits at H/output_stride.
    """

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        n_down = int(round(math.log2(config.output_stride)))
        stages = []
        c_in = 3
        for i in range(config.depth):
            c_out = config.base_channels * (2 ** min(i, 3))
            stages.append(_conv_block(c_in, c_out, stride=2 if i < n_down else 1))
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.head = nn.Conv2d(c_in, config.class_count, 1)
        self.apply(_init_segmenter_weights)

    def forward(self, image):
        return segment(self, image)


def _init_segmenter_weights(m):
    if isinstance(m, nn.Conv2d):
        nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def _init_discriminator_weights(m):
    if isinstance(m, nn.Conv2d):
        nn.init.normal_(m.weight, 0.0, 0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)


class PixelDiscriminator(nn.Module):
    """Spatial-size-preserving discriminator over probability maps.

    Three convolutions (channels 64, 128, 1; kernels 3, 3, 1; stride 1) with
    leaky rectifiers between, ending in a per-pixel sigmoid.
    """

    def __init__(self, in_channels: int):
        super().__init__()
        if in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {in_channels}")
        self.in_channels = in_channels
        layers = []
        c_in = in_channels
        for i, (c_out, k, p) in enumerate(
            zip(PIXEL_DISC_CHANNELS, PIXEL_DISC_KERNELS, PIXEL_DISC_PADDINGS)
        ):
            layers.append(nn.Conv2d(c_in, c_out, k, stride=1, padding=p))
            if i < len(PIXEL_DISC_CHANNELS) - 1:
                layers.append(nn.LeakyReLU(LEAKY_SLOPE, inplace=True))
            c_in = c_out
        self.net = nn.Sequential(*layers)
        self.apply(_init_discriminator_weights)

    def forward(self, prob_map):
        return pixel_discriminate(self, prob_map)


class ImageDiscriminator(nn.Module):
    """Whole-image discriminator: five stride-2 4x4 convolutions, pooled to a scalar."""

    def __init__(self, in_channels: int):
        super().__init__()
        if in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {in_channels}")
        self.in_channels = in_channels
        layers = []
        c_in = in_channels
        for i, c_out in enumerate(IMAGE_DISC_CHANNELS):
            layers.append(nn.Conv2d(c_in, c_out, IMAGE_DISC_KERNEL, stride=IMAGE_DISC_STRIDE, padding=1))
            if i < len(IMAGE_DISC_CHANNELS) - 1:
                layers.append(nn.LeakyReLU(LEAKY_SLOPE, inplace=True))
            c_in = c_out
        self.net = nn.Sequential(*layers)
        self.apply(_init_discriminator_weights)

    def forward(self, prob_map):
        return image_discriminate(self, prob_map)


def _with_batch_dim(x, rank):
    if x.dim() == rank:
        return x.unsqueeze(0), True
    if x.dim() == rank + 1:
        return x, False
    raise ValueError(f"expected a rank-{rank} or rank-{rank + 1} tensor, got shape {tuple(x.shape)}")


def segment(model: Segmenter, image):
    """Map an image (3, H, W) or batch (B, 3, H, W) to per-pixel class logits."""
    x, squeeze = _with_batch_dim(image, 3)
    if x.shape[1] != 3:
        raise ValueError(f"expected a 3-channel image, got {x.shape[1]} channels")
    logits = model.head(model.stages(x))
    return logits.squeeze(0) if squeeze else logits


def pixel_discriminate(d: PixelDiscriminator, prob_map):
    """Per-pixel source probability, same spatial size as the input map."""
    x, squeeze = _with_batch_dim(prob_map, 3)
    if x.shape[1] != d.in_channels:
        raise ValueError(f"expected {d.in_channels} channels, got {x.shape[1]}")
    out = torch.sigmoid(d.net(x)).squeeze(1)
    return out.squeeze(0) if squeeze else out


def image_discriminate(dg: ImageDiscriminator, prob_map):
    """Scalar source probability in (0, 1) per image (batched input -> (B,) tensor)."""
    x, squeeze = _with_batch_dim(prob_map, 3)
    if x.shape[1] != dg.in_channels:
        raise ValueError(f"expected {dg.in_channels} channels, got {x.shape[1]}")
    h, w = x.shape[-2:]
    if h < IMAGE_DISC_MIN_INPUT or w < IMAGE_DISC_MIN_INPUT:
        raise ValueError(
            f"input spatial size {h}x{w} is below the "
            f"{IMAGE_DISC_MIN_INPUT}x{IMAGE_DISC_MIN_INPUT} minimum"
        )
    feat = dg.net(x)
    out = torch.sigmoid(feat.mean(dim=(2, 3))).squeeze(1)
    return out.squeeze(0) if squeeze else out


_MODEL_KINDS = {
    "segmenter": Segmenter,
    "pixel_discriminator": PixelDiscriminator,
    "image_discriminator": ImageDiscriminator,
}


def save_checkpoint(path, model, extra: dict | None = None):
    """Write a versioned checkpoint: format tag, model kind, config, parameters.

    `extra` entries (plain JSON-like metadata, e.g. training progress) are
    stored under "extra" and returned untouched by load_checkpoint.
    """
    if isinstance(model, Segmenter):
        kind, config = "segmenter", dataclasses.asdict(model.config)
    elif isinstance(model, PixelDiscriminator):
        kind, config = "pixel_discriminator", {"in_channels": model.in_channels}
    elif isinstance(model, ImageDiscriminator):
        kind, config = "image_discriminator", {"in_channels": model.in_channels}
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "state_dict": model.state_dict(),
        "torch_rng_state": torch.get_rng_state(),
        "extra": dict(extra) if extra else {},
    }
    torch.save(payload, path)


def load_checkpoint(path, restore_rng: bool = False):
    """Rebuild a model from a checkpoint; returns (model, extra)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format_version {version!r}; "
            f"this build reads version {CHECKPOINT_FORMAT_VERSION}"
        )
    kind = payload["kind"]
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == "segmenter":
        model = Segmenter(SegmenterConfig(**payload["config"]))
    else:
        model = _MODEL_KINDS[kind](**payload["config"])
    model.load_state_dict(payload["state_dict"])
    if restore_rng:
        torch.set_rng_state(payload["torch_rng_state"])
    return model, payload.get("extra", {})


def softmax_probs(logits):
    """Class-probability map from logits; channel dim is -3 for both ranks."""
    return F.softmax(logits, dim=-3)
