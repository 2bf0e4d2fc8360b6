"""Segmentation, adversarial and distillation losses plus the per-pixel weight maps.

All functions are pure and stateless. They accept either a single image
(probabilities ``(C, H, W)``, labels ``(H, W)``) or a batch with a leading
dimension; batched inputs are reduced as the mean of per-image losses.
"""

from dataclasses import dataclass

import torch

IGNORE_INDEX = 255

# Probabilities are clamped to [EPS, 1 - EPS] before every log.
EPS = 1e-7


@dataclass(frozen=True)
class FocalParams:
    """Modulation parameters of the focal segmentation loss."""

    alpha: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


@dataclass(frozen=True)
class WeightMaps:
    """Per-pixel confidence (s) and class-imbalance (b) weights.

    Both maps are constants with respect to any loss that consumes them;
    they never carry gradient back into the network that produced them.
    """

    s: torch.Tensor
    b: torch.Tensor


def validate_prob_map(probs, class_count=None, tol=1e-5):
    """Check that a tensor is a valid per-pixel probability map.

    Entries must lie in [0, 1] and each pixel's class vector must sum to 1
    within ``tol``. Raises ValueError otherwise.
    """
    if probs.dim() not in (3, 4):
        raise ValueError(f"probability map must be (C,H,W) or (B,C,H,W), got {tuple(probs.shape)}")
    if class_count is not None and probs.shape[-3] != class_count:
        raise ValueError(f"expected {class_count} classes, got {probs.shape[-3]}")
    if probs.min() < -tol or probs.max() > 1 + tol:
        raise ValueError("probability entries outside [0, 1]")
    sums = probs.sum(dim=-3)
    if (sums - 1).abs().max() > tol:
        raise ValueError("per-pixel class probabilities do not sum to 1")


def validate_label_map(labels, class_count, ignore_index=IGNORE_INDEX):
    """Check that all non-ignore labels are valid class indices."""
    if labels.dim() not in (2, 3):
        raise ValueError(f"label map must be (H,W) or (B,H,W), got {tuple(labels.shape)}")
    valid = labels != ignore_index
    if valid.any():
        picked = labels[valid]
        if picked.min() < 0 or picked.max() >= class_count:
            raise ValueError(f"label values must be in [0, {class_count}) or {ignore_index}")


def _as_batched(probs, labels):
    """Normalize to (B,C,H,W)/(B,H,W), checking that spatial shapes agree."""
    if probs.dim() == 3 and labels.dim() == 2:
        probs, labels = probs.unsqueeze(0), labels.unsqueeze(0)
    elif not (probs.dim() == 4 and labels.dim() == 3):
        raise ValueError(
            f"incompatible ranks: probs {tuple(probs.shape)}, labels {tuple(labels.shape)}"
        )
    if probs.shape[0] != labels.shape[0] or probs.shape[-2:] != labels.shape[-2:]:
        raise ValueError(
            f"shape mismatch: probs {tuple(probs.shape)}, labels {tuple(labels.shape)}"
        )
    return probs, labels


def _true_class_prob(probs, labels, valid):
    labels_safe = labels.masked_fill(~valid, 0)
    return probs.gather(1, labels_safe.unsqueeze(1)).squeeze(1)


def focal_loss(probs, labels, params=FocalParams(), ignore_index=IGNORE_INDEX):
    """Focal loss: -mean_i alpha * (1 - p_i)^gamma * log(p_i).

    p_i is the predicted probability of the true class at pixel i. The mean
    runs over non-ignore pixels of each image; a batch is reduced as the
    mean of per-image losses. gamma = 0, alpha = 1 recovers cross-entropy.
    """
    probs, labels = _as_batched(probs, labels)
    valid = labels != ignore_index
    n_valid = valid.sum(dim=(1, 2))
    if (n_valid == 0).any():
        raise ValueError("image with no non-ignore pixels: empty supervision")
    p = _true_class_prob(probs, labels, valid).clamp(EPS, 1.0)
    term = params.alpha * (1 - p) ** params.gamma * torch.log(p)
    per_image = -(term * valid).sum(dim=(1, 2)) / n_valid
    return per_image.mean()


def s_map(probs, labels, ignore_index=IGNORE_INDEX):
    """Confidence weight map: -log p_i of the true class, 0 at ignored pixels.

    The result is detached: it modulates losses without taking part in
    backpropagation.
    """
    squeeze = labels.dim() == 2
    probs, labels = _as_batched(probs, labels)
    with torch.no_grad():
        valid = labels != ignore_index
        p = _true_class_prob(probs, labels, valid).clamp(EPS, 1.0)
        s = torch.where(valid, -torch.log(p), torch.zeros_like(p))
    return s.squeeze(0) if squeeze else s


def b_map(labels, ignore_index=IGNORE_INDEX, dtype=torch.float32):
    """Imbalance weight map: 1 minus the within-image frequency of each pixel's class.

    Frequencies count valid pixels of the same image only; ignored pixels get
    weight 0. A single-class image therefore yields an all-zero map.
    """
    squeeze = labels.dim() == 2
    if squeeze:
        labels = labels.unsqueeze(0)
    elif labels.dim() != 3:
        raise ValueError(f"label map must be (H,W) or (B,H,W), got {tuple(labels.shape)}")
    out = torch.zeros(labels.shape, dtype=dtype)
    for i in range(labels.shape[0]):
        lab = labels[i]
        valid = lab != ignore_index
        n_valid = int(valid.sum())
        if n_valid == 0:
            raise ValueError("image with no non-ignore pixels: imbalance map undefined")
        flat = lab[valid]
        counts = torch.bincount(flat, minlength=int(flat.max()) + 1)
        freq = counts.to(dtype) / n_valid
        out[i][valid] = 1 - freq[flat]
    return out.squeeze(0) if squeeze else out


def make_weight_maps(probs, labels, ignore_index=IGNORE_INDEX):
    """Build both adversarial weight maps from a prediction and its labels."""
    return WeightMaps(
        s=s_map(probs, labels, ignore_index),
        b=b_map(labels, ignore_index, dtype=probs.dtype),
    )


def pixel_discriminator_loss(d_src, d_tgt):
    """Binary loss of the pixel-wise domain discriminator.

    d_src and d_tgt are per-pixel source-probability maps (after sigmoid).
    Source pixels are pushed towards 1, target pixels towards 0; each map is
    normalized by its own pixel count so the loss is resolution independent.
    """
    d_src = d_src.clamp(EPS, 1 - EPS)
    d_tgt = d_tgt.clamp(EPS, 1 - EPS)
    return -torch.log(d_src).mean() - torch.log(1 - d_tgt).mean()


def pixadv_loss(d_tgt, weights):
    """Weighted pixel-wise adversarial loss: -mean_i s_i * b_i * log d_i.

    d_tgt is the discriminator's source-probability map on a target
    prediction. Gradient flows only through d_tgt; the weight maps are
    treated as constants.
    """
    s = weights.s.detach()
    b = weights.b.detach()
    if s.shape != d_tgt.shape or b.shape != d_tgt.shape:
        raise ValueError(
            f"shape mismatch: d {tuple(d_tgt.shape)}, s {tuple(s.shape)}, b {tuple(b.shape)}"
        )
    d = d_tgt.clamp(EPS, 1 - EPS)
    return -(s * b * torch.log(d)).mean()


def global_discriminator_loss(dg_src, dg_tgt):
    """Binary loss of the image-wise domain discriminator.

    Inputs are sigmoid outputs, scalar per image. By contract this loss is
    computed on predictions detached from the segmenter, so it never reaches
    the segmentation parameters.
    """
    dg_src = dg_src.clamp(EPS, 1 - EPS)
    dg_tgt = dg_tgt.clamp(EPS, 1 - EPS)
    return -torch.log(dg_src).mean() - torch.log(1 - dg_tgt).mean()


def kd_loss(teacher_logits, student_logits, tau):
    """Distillation cross-entropy between softened teacher and student outputs.

    Per pixel: -sum_c softmax(teacher / tau)_c * log softmax(student)_c,
    averaged over pixels. Only the teacher is temperature scaled, and no
    gradient reaches it.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(
            f"shape mismatch: teacher {tuple(teacher_logits.shape)},"
            f" student {tuple(student_logits.shape)}"
        )
    soft_teacher = torch.softmax(teacher_logits.detach() / tau, dim=-3)
    log_student = torch.log_softmax(student_logits, dim=-3)
    return -(soft_teacher * log_student).sum(dim=-3).mean()


def phase2_total_loss(
    src_probs,
    src_labels,
    tgt_probs,
    tgt_labels,
    d_tgt,
    lambda_adv,
    focal=FocalParams(),
    ignore_index=IGNORE_INDEX,
):
    """Adversarial-phase segmenter objective.

    Mean source focal loss + mean target focal loss + lambda_adv times the
    weighted pixel-wise adversarial loss. The weight maps are recomputed from
    the target prediction and labels. lambda_adv = 0 skips the adversarial
    term entirely, reducing to plain joint training.
    """
    if src_probs.dim() == 4 and src_probs.shape[0] == 0:
        raise ValueError("empty source batch: the retained source pool is exhausted")
    loss = focal_loss(src_probs, src_labels, focal, ignore_index)
    loss = loss + focal_loss(tgt_probs, tgt_labels, focal, ignore_index)
    if lambda_adv != 0:
        weights = make_weight_maps(tgt_probs, tgt_labels, ignore_index)
        loss = loss + lambda_adv * pixadv_loss(d_tgt, weights)
    return loss


def finetune_total_loss(
    tgt_labels,
    teacher_logits,
    student_logits,
    lambda_kd,
    tau,
    focal=FocalParams(),
    ignore_index=IGNORE_INDEX,
):
    """Fine-tuning objective: target focal loss + lambda_kd * distillation loss.

    lambda_kd = 0 skips the distillation term, reducing to naive fine-tuning.
    """
    student_probs = torch.softmax(student_logits, dim=-3)
    loss = focal_loss(student_probs, tgt_labels, focal, ignore_index)
    if lambda_kd != 0:
        loss = loss + lambda_kd * kd_loss(teacher_logits, student_logits, tau)
    return loss
