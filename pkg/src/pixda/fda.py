"""FFT amplitude-swap style transfer.

Replaces the low-frequency amplitude of a source image with that of a target
style image while keeping the source phase everywhere, reducing low-level
visual domain shift before adversarial training and sample selection.
"""

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class FdaParams:
    """beta is the half-width fraction of the centered low-frequency window."""

    beta: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError(f"beta must be in [0, 0.5], got {self.beta}")


def _window_slices(h, w, beta):
    # centered (2*floor(beta*H)+1) x (2*floor(beta*W)+1) window around the
    # shifted DC bin; slices clamped to the image bounds
    bh, bw = int(beta * h), int(beta * w)
    cy, cx = h // 2, w // 2
    return (
        slice(max(cy - bh, 0), min(cy + bh + 1, h)),
        slice(max(cx - bw, 0), min(cx + bw + 1, w)),
    )


def fda_translate(src, tgt_style, params: FdaParams = FdaParams()):
    """Return src with its low-frequency amplitude replaced by tgt_style's.

    Both inputs are (3, H, W) tensors in [0, 1]. Per channel: 2-D FFT of both,
    swap amplitude inside the centered window, keep src phase, inverse
    transform, clamp to [0, 1].
    """
    if src.shape != tgt_style.shape:
        raise ValueError(f"size mismatch: src {tuple(src.shape)} vs target style {tuple(tgt_style.shape)}")
    if src.dim() != 3 or src.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {tuple(src.shape)}")
    h, w = src.shape[-2:]
    ys, xs = _window_slices(h, w, params.beta)

    fft_src = torch.fft.fftshift(torch.fft.fft2(src.to(torch.float64)), dim=(-2, -1))
    fft_tgt = torch.fft.fftshift(torch.fft.fft2(tgt_style.to(torch.float64)), dim=(-2, -1))

    amp = fft_src.abs()
    amp[..., ys, xs] = fft_tgt.abs()[..., ys, xs]
    phase = torch.angle(fft_src)
    mixed = torch.polar(amp, phase)

    out = torch.fft.ifft2(torch.fft.ifftshift(mixed, dim=(-2, -1))).real
    return out.clamp(0.0, 1.0).to(src.dtype)
