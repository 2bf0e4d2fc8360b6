"""Training phases and baselines.

Pipeline: source pretraining -> adversarial alignment with per-epoch source
pruning -> knowledge-distilled fine-tuning. Every phase pre-generates its
batch index streams from dedicated seeded generators, so results depend only
on config + seed, never on loader scheduling. Update order inside each
adversarial iteration: pixel discriminator, image discriminator (segmenter
outputs detached for both), then segmenter with discriminator weights frozen.
"""

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import LabeledImage
from .fda import FdaParams, fda_translate
from .losses import (
    EPS,
    FocalParams,
    WeightMaps,
    b_map,
    finetune_total_loss,
    focal_loss,
    global_discriminator_loss,
    make_weight_maps,
    phase2_total_loss,
    pixadv_loss,
    pixel_discriminator_loss,
    s_map,
)
from .metrics import ClassPartition, evaluate, save_report
from .models import (
    ImageDiscriminator,
    PixelDiscriminator,
    Segmenter,
    SegmenterConfig,
    image_discriminate,
    pixel_discriminate,
    save_checkpoint,
    segment,
    softmax_probs,
)
from .selection import SelectionState, select_epoch

ADVERSARIAL_VARIANTS = ("none", "image_wise", "pixel_plain", "pixel_b", "pixel_s", "full")
BASELINE_KINDS = ("source_only", "joint_training", "fine_tuning", "image_wise_adversarial")

# phase codes keep every RNG stream disjoint
_PHASE_PRETRAIN, _PHASE_ADV, _PHASE_KD, _PHASE_JOINT = 1, 2, 3, 4
_STREAM_PRETRAIN_BATCH = 11
_STREAM_FDA_STYLE = 30
_STREAM_ADV_SRC = 31
_STREAM_ADV_TGT = 32
_STREAM_KD_BATCH = 40
_STREAM_JOINT = 41


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    poly_power: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adam', got {self.kind!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.momentum < 0:
            raise ValueError(f"momentum must be >= 0, got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.poly_power < 0:
            raise ValueError(f"poly_power must be >= 0, got {self.poly_power}")

    def to_dict(self):
        return {**asdict(self), "betas": list(self.betas)}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(**{**d, "betas": tuple(d.get("betas", (0.9, 0.999)))})


def default_seg_optimizer():
    return OptimizerConfig(kind="sgd", lr=2.5e-4, momentum=0.9, weight_decay=5e-4)


def default_disc_optimizer():
    return OptimizerConfig(kind="adam", lr=1e-5, betas=(0.9, 0.99))


@dataclass(frozen=True)
class TrainConfig:
    lambda_adv: float = 0.001
    lambda_kd: float = 0.5
    tau: float = 0.5
    focal: FocalParams = field(default_factory=FocalParams)
    delta0: float = 0.4
    delta_max: float = 1.0 - 1e-6
    seg_optimizer: OptimizerConfig = field(default_factory=default_seg_optimizer)
    disc_optimizer: OptimizerConfig = field(default_factory=default_disc_optimizer)
    batch_size: int = 4
    pretrain_iterations: int = 200
    iterations_per_epoch: int = 50
    max_adv_epochs: int = 8
    kd_iterations: int = 200
    fda_beta: float = 0.01
    disc_input_noise: float = 0.0  # instance-noise sigma on discriminator inputs
    selection_disc_lr: float | None = None  # scorer-only lr; None shares the disc lr
    seed: int = 0

    def __post_init__(self):
        if self.lambda_adv < 0:
            raise ValueError(f"lambda_adv must be >= 0, got {self.lambda_adv}")
        if self.lambda_kd < 0:
            raise ValueError(f"lambda_kd must be >= 0, got {self.lambda_kd}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.delta0 <= 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if not 0 < self.delta_max < 1:
            raise ValueError(f"delta_max must lie in (0, 1), got {self.delta_max}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.pretrain_iterations < 1:
            raise ValueError(f"pretrain_iterations must be >= 1, got {self.pretrain_iterations}")
        if self.iterations_per_epoch < 1:
            raise ValueError(f"iterations_per_epoch must be >= 1, got {self.iterations_per_epoch}")
        if self.max_adv_epochs < 1:
            raise ValueError(f"max_adv_epochs must be >= 1, got {self.max_adv_epochs}")
        if self.kd_iterations < 1:
            raise ValueError(f"kd_iterations must be >= 1, got {self.kd_iterations}")
        if not 0 <= self.fda_beta <= 0.5:
            raise ValueError(f"fda_beta must be in [0, 0.5], got {self.fda_beta}")
        if self.disc_input_noise < 0:
            raise ValueError(f"disc_input_noise must be >= 0, got {self.disc_input_noise}")
        if self.selection_disc_lr is not None and self.selection_disc_lr < 0:
            raise ValueError(f"selection_disc_lr must be >= 0, got {self.selection_disc_lr}")

    def to_dict(self):
        return {
            **asdict(self),
            "focal": asdict(self.focal),
            "seg_optimizer": self.seg_optimizer.to_dict(),
            "disc_optimizer": self.disc_optimizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict):
        d = dict(d)
        if "focal" in d:
            d["focal"] = FocalParams(**d["focal"])
        if "seg_optimizer" in d:
            d["seg_optimizer"] = OptimizerConfig.from_dict(d["seg_optimizer"])
        if "disc_optimizer" in d:
            d["disc_optimizer"] = OptimizerConfig.from_dict(d["disc_optimizer"])
        return cls(**d)


class RunLogger:
    """Owns a run directory: JSON snapshots, jsonl streams, checkpoints."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def write_json(self, name, payload: dict):
        (self.run_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True))

    def append(self, stream, record: dict):
        with open(self.run_dir / stream, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint(self, name, model, extra=None):
        save_checkpoint(self.run_dir / name, model, extra=extra)


def poly_lr(lr0: float, iteration: int, max_iter: int, power: float) -> float:
    """lr0 * (1 - iteration/max_iter)^power, clamped to the schedule range."""
    if max_iter <= 0:
        return lr0
    frac = min(max(iteration / max_iter, 0.0), 1.0)
    return lr0 * (1.0 - frac) ** power


def build_optimizer(parameters, cfg: OptimizerConfig):
    if cfg.kind == "sgd":
        return torch.optim.SGD(
            parameters, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
        )
    return torch.optim.Adam(
        parameters, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
    )


def _set_lr(optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def phase_seed(seed: int, code: int) -> int:
    return int(np.random.SeedSequence([seed, code]).generate_state(1)[0])


def batch_index_stream(seed: int, stream: int, epoch: int, pool_size: int, batch_size: int, count: int):
    """Pre-generated (count, batch_size) uniform index draws with replacement."""
    rng = np.random.default_rng([seed, stream, epoch])
    return rng.integers(0, pool_size, size=(count, batch_size))


def style_assignments(seed: int, epoch: int, pool_size: int, n_styles: int):
    """Per-epoch style image index for each source image."""
    rng = np.random.default_rng([seed, _STREAM_FDA_STYLE, epoch])
    return rng.integers(0, n_styles, size=pool_size)


def translate_pool(pool, target_styles, beta: float, seed: int, epoch: int):
    """FDA-translate every source image toward a sampled target style."""
    assign = style_assignments(seed, epoch, len(pool), len(target_styles))
    params = FdaParams(beta=beta)
    return [
        replace(item, image=fda_translate(item.image, target_styles[int(j)].image, params))
        for item, j in zip(pool, assign)
    ]


def _stack(items, indices):
    images = torch.stack([items[int(i)].image for i in indices])
    labels = torch.stack([items[int(i)].labels for i in indices])
    return images, labels


def _logits_at(model, images, out_hw):
    """Segmenter logits bilinearly upsampled to the label resolution."""
    squeeze = images.dim() == 3
    logits = segment(model, images.unsqueeze(0) if squeeze else images)
    if logits.shape[-2:] != tuple(out_hw):
        logits = F.interpolate(logits, size=tuple(out_hw), mode="bilinear", align_corners=False)
    return logits.squeeze(0) if squeeze else logits


def _probs_at(model, images, out_hw):
    return softmax_probs(_logits_at(model, images, out_hw))


def _check_finite(value: float, phase: str, iteration: int):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at {phase} iteration {iteration}")


_SCORE_EPS = 1e-5  # keep scores inside (0, 1); float32 sigmoid saturates to exactly 1


def _score_pool(model, d_img, pool, chunk_size: int = 32):
    """Image-discriminator score per pool id, batched when shapes allow."""
    scores = {}
    uniform = len({tuple(item.image.shape) for item in pool}) == 1

    def clamp(v: float) -> float:
        return min(max(v, _SCORE_EPS), 1.0 - _SCORE_EPS)

    with torch.no_grad():
        if uniform:
            for start in range(0, len(pool), chunk_size):
                chunk = pool[start : start + chunk_size]
                images = torch.stack([c.image for c in chunk])
                probs = _probs_at(model, images, chunk[0].labels.shape[-2:])
                values = image_discriminate(d_img, probs)
                for item, v in zip(chunk, values.tolist()):
                    scores[item.id] = clamp(float(v))
        else:
            for item in pool:
                probs = _probs_at(model, item.image, item.labels.shape[-2:])
                scores[item.id] = clamp(float(image_discriminate(d_img, probs)))
    return scores


def pretrain_source(config: TrainConfig, model_config: SegmenterConfig, source_data, run=None):
    """Supervised focal-loss training of a fresh segmenter on source images."""
    if not source_data:
        raise ValueError("source dataset is empty")
    torch.manual_seed(phase_seed(config.seed, _PHASE_PRETRAIN))
    model = Segmenter(model_config)
    model.train()
    opt = build_optimizer(model.parameters(), config.seg_optimizer)
    n_iter = config.pretrain_iterations
    batches = batch_index_stream(
        config.seed, _STREAM_PRETRAIN_BATCH, 0, len(source_data), config.batch_size, n_iter
    )
    for it in range(n_iter):
        lr = poly_lr(config.seg_optimizer.lr, it, n_iter, config.seg_optimizer.poly_power)
        _set_lr(opt, lr)
        images, labels = _stack(source_data, batches[it])
        probs = _probs_at(model, images, labels.shape[-2:])
        loss = focal_loss(probs, labels, config.focal)
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = float(loss.detach())
        _check_finite(value, "pretrain", it)
        if run:
            run.append("metrics.jsonl", {"phase": "pretrain", "iteration": it, "lr": lr, "loss": value})
    if run:
        run.checkpoint("pretrain.pt", model, extra={"phase": "pretrain", "iterations": n_iter})
    return model


def _noisy(probs, sigma: float):
    """Instance-noise view of a probability map for discriminator consumption."""
    if sigma <= 0:
        return probs
    return probs + sigma * torch.randn_like(probs)


def _adversarial_term(variant, d_pix, d_img, tgt_probs, tgt_labels, disc_view):
    """Variant-specific alignment penalty on the target batch.

    disc_view is the (possibly noise-regularized) tensor fed to discriminators;
    the S weights always come from the clean probabilities.
    """
    if variant == "image_wise":
        d = image_discriminate(d_img, disc_view).clamp(EPS, 1.0 - EPS)
        return -torch.log(d).mean()
    d_t = pixel_discriminate(d_pix, disc_view)
    ones = torch.ones_like(d_t)
    if variant == "pixel_plain":
        weights = WeightMaps(s=ones, b=ones)
    elif variant == "pixel_b":
        weights = WeightMaps(s=ones, b=b_map(tgt_labels, dtype=tgt_probs.dtype))
    elif variant == "pixel_s":
        weights = WeightMaps(s=s_map(tgt_probs, tgt_labels), b=ones)
    else:
        raise ValueError(f"unknown adversarial variant {variant!r}")
    return pixadv_loss(d_t, weights)


def train_adversarial(
    config: TrainConfig,
    model: Segmenter,
    source_data,
    target_kshot,
    variant: str = "full",
    use_selection: bool = True,
    run=None,
    step_callback=None,
):
    """Adversarial alignment phase; returns the teacher segmenter.

    Per iteration: pixel-discriminator step, image-discriminator step (both on
    detached segmenter outputs), segmenter step with discriminators frozen.
    After each epoch the source pool is pruned by image-discriminator score.
    When the image discriminator serves only as the selection scorer (no
    image-level term in the segmenter loss), config.selection_disc_lr, if set,
    replaces the discriminator lr so scorer confidence can grow at its own
    pace. step_callback(stage, model, d_pix, d_img), when given, is invoked
    after every sub-step for instrumentation.
    """
    if variant not in ADVERSARIAL_VARIANTS:
        raise ValueError(f"variant must be one of {ADVERSARIAL_VARIANTS}, got {variant!r}")
    if not source_data:
        raise ValueError("source dataset is empty")
    if not target_kshot:
        raise ValueError("target dataset is empty")

    torch.manual_seed(phase_seed(config.seed, _PHASE_ADV))
    class_count = model.config.class_count
    need_pixel = variant in ("pixel_plain", "pixel_b", "pixel_s", "full")
    need_image = use_selection or variant == "image_wise"
    d_pix = PixelDiscriminator(class_count) if need_pixel else None
    d_img = ImageDiscriminator(class_count) if need_image else None

    model.train()
    model.zero_grad(set_to_none=True)  # drop any buffers left by earlier phases
    seg_opt = build_optimizer(model.parameters(), config.seg_optimizer)
    pix_opt = build_optimizer(d_pix.parameters(), config.disc_optimizer) if d_pix else None
    img_opt = build_optimizer(d_img.parameters(), config.disc_optimizer) if d_img else None

    by_id = {item.id: item for item in source_data}
    state = SelectionState.initial(
        [item.id for item in source_data], delta0=config.delta0, delta_max=config.delta_max
    )
    scorer_only = use_selection and variant != "image_wise"
    img_lr0 = (
        config.selection_disc_lr
        if scorer_only and config.selection_disc_lr is not None
        else config.disc_optimizer.lr
    )
    max_iter = config.max_adv_epochs * config.iterations_per_epoch  # decay horizon, fixed
    global_it = 0

    for epoch in range(config.max_adv_epochs):
        pool = [by_id[i] for i in state.retained_ids]
        if not pool:
            break
        translated = translate_pool(pool, target_kshot, config.fda_beta, config.seed, epoch)
        src_idx = batch_index_stream(
            config.seed, _STREAM_ADV_SRC, epoch, len(translated), config.batch_size,
            config.iterations_per_epoch,
        )
        tgt_idx = batch_index_stream(
            config.seed, _STREAM_ADV_TGT, epoch, len(target_kshot), config.batch_size,
            config.iterations_per_epoch,
        )
        for i in range(config.iterations_per_epoch):
            lr_seg = poly_lr(
                config.seg_optimizer.lr, global_it, max_iter, config.seg_optimizer.poly_power
            )
            lr_disc = poly_lr(
                config.disc_optimizer.lr, global_it, max_iter, config.disc_optimizer.poly_power
            )
            src_images, src_labels = _stack(translated, src_idx[i])
            tgt_images, tgt_labels = _stack(target_kshot, tgt_idx[i])
            record = {"phase": "adversarial", "epoch": epoch, "iteration": global_it, "lr": lr_seg}

            src_probs = _probs_at(model, src_images, src_labels.shape[-2:])
            tgt_probs = _probs_at(model, tgt_images, tgt_labels.shape[-2:])

            sigma = config.disc_input_noise
            if d_pix is not None:
                _set_lr(pix_opt, lr_disc)
                pix_opt.zero_grad()
                loss_dp = pixel_discriminator_loss(
                    pixel_discriminate(d_pix, _noisy(src_probs.detach(), sigma)),
                    pixel_discriminate(d_pix, _noisy(tgt_probs.detach(), sigma)),
                )
                loss_dp.backward()
                pix_opt.step()
                record["loss_pixel_disc"] = float(loss_dp.detach())
                _check_finite(record["loss_pixel_disc"], "adversarial/pixel_disc", global_it)
                if step_callback:
                    step_callback("pixel_disc", model, d_pix, d_img)

            if d_img is not None:
                _set_lr(
                    img_opt,
                    poly_lr(img_lr0, global_it, max_iter, config.disc_optimizer.poly_power),
                )
                img_opt.zero_grad()
                loss_dg = global_discriminator_loss(
                    image_discriminate(d_img, _noisy(src_probs.detach(), sigma)),
                    image_discriminate(d_img, _noisy(tgt_probs.detach(), sigma)),
                )
                loss_dg.backward()
                img_opt.step()
                record["loss_image_disc"] = float(loss_dg.detach())
                _check_finite(record["loss_image_disc"], "adversarial/image_disc", global_it)
                if step_callback:
                    step_callback("image_disc", model, d_pix, d_img)

            for d in (d_pix, d_img):
                if d is not None:
                    d.requires_grad_(False)
            _set_lr(seg_opt, lr_seg)
            seg_opt.zero_grad()
            if variant in ("none", "full"):
                d_t = (
                    pixel_discriminate(d_pix, _noisy(tgt_probs, sigma))
                    if variant == "full"
                    else torch.zeros_like(tgt_labels, dtype=tgt_probs.dtype)
                )
                loss_seg = phase2_total_loss(
                    src_probs, src_labels, tgt_probs, tgt_labels, d_t,
                    lambda_adv=config.lambda_adv if variant == "full" else 0.0,
                    focal=config.focal,
                )
            else:
                loss_seg = focal_loss(src_probs, src_labels, config.focal) + focal_loss(
                    tgt_probs, tgt_labels, config.focal
                )
                if config.lambda_adv != 0:
                    loss_seg = loss_seg + config.lambda_adv * _adversarial_term(
                        variant, d_pix, d_img, tgt_probs, tgt_labels,
                        _noisy(tgt_probs, sigma),
                    )
            loss_seg.backward()
            seg_opt.step()
            for d in (d_pix, d_img):
                if d is not None:
                    d.requires_grad_(True)
            record["loss_seg"] = float(loss_seg.detach())
            _check_finite(record["loss_seg"], "adversarial/segmenter", global_it)
            if step_callback:
                step_callback("segmenter", model, d_pix, d_img)
            if run:
                run.append("metrics.jsonl", record)
            global_it += 1

        if use_selection:
            scores = _score_pool(model, d_img, translated)
            threshold = state.delta
            new_state = select_epoch(state, scores)
            dropped = [i for i in state.retained_ids if i not in set(new_state.retained_ids)]
            if run:
                run.append(
                    "selection_log.jsonl",
                    {
                        "epoch": epoch,
                        "delta": threshold,
                        "retained": len(new_state.retained_ids),
                        "dropped_ids": dropped,
                    },
                )
            state = new_state
            if state.exhausted:
                break

    if run:
        run.checkpoint("teacher.pt", model, extra={"phase": "adversarial", "variant": variant})
    return model


def finetune_kd(config: TrainConfig, teacher: Segmenter, target_kshot, run=None):
    """Distill a frozen teacher into a student on the target shots."""
    if not target_kshot:
        raise ValueError("target dataset is empty")
    torch.manual_seed(phase_seed(config.seed, _PHASE_KD))
    frozen = copy.deepcopy(teacher)
    frozen.eval()
    frozen.requires_grad_(False)
    student = copy.deepcopy(teacher)
    student.train()
    opt = build_optimizer(student.parameters(), config.seg_optimizer)
    n_iter = config.kd_iterations
    batches = batch_index_stream(
        config.seed, _STREAM_KD_BATCH, 0, len(target_kshot), config.batch_size, n_iter
    )
    for it in range(n_iter):
        lr = poly_lr(config.seg_optimizer.lr, it, n_iter, config.seg_optimizer.poly_power)
        _set_lr(opt, lr)
        images, labels = _stack(target_kshot, batches[it])
        with torch.no_grad():
            teacher_logits = _logits_at(frozen, images, labels.shape[-2:])
        student_logits = _logits_at(student, images, labels.shape[-2:])
        loss = finetune_total_loss(
            labels, teacher_logits, student_logits,
            lambda_kd=config.lambda_kd, tau=config.tau, focal=config.focal,
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = float(loss.detach())
        _check_finite(value, "finetune", it)
        if run:
            run.append("metrics.jsonl", {"phase": "finetune", "iteration": it, "lr": lr, "loss": value})
    if run:
        run.checkpoint("final.pt", student, extra={"phase": "finetune", "iterations": n_iter})
    return student


def _train_joint(config: TrainConfig, model_config: SegmenterConfig, source_data, target_kshot, run=None):
    """From-scratch supervised training on the pooled source + target shots.

    Batches are drawn uniformly from the union, so a handful of target shots
    contributes in proportion to its share of the pool rather than being
    oversampled.
    """
    if not source_data or not target_kshot:
        raise ValueError("joint training needs non-empty source and target sets")
    torch.manual_seed(phase_seed(config.seed, _PHASE_JOINT))
    model = Segmenter(model_config)
    model.train()
    opt = build_optimizer(model.parameters(), config.seg_optimizer)
    n_iter = config.pretrain_iterations
    pool = list(source_data) + list(target_kshot)
    idx = batch_index_stream(config.seed, _STREAM_JOINT, 0, len(pool), config.batch_size, n_iter)
    for it in range(n_iter):
        lr = poly_lr(config.seg_optimizer.lr, it, n_iter, config.seg_optimizer.poly_power)
        _set_lr(opt, lr)
        images, labels = _stack(pool, idx[it])
        loss = focal_loss(_probs_at(model, images, labels.shape[-2:]), labels, config.focal)
        opt.zero_grad()
        loss.backward()
        opt.step()
        value = float(loss.detach())
        _check_finite(value, "joint", it)
        if run:
            run.append("metrics.jsonl", {"phase": "joint", "iteration": it, "lr": lr, "loss": value})
    if run:
        run.checkpoint("final.pt", model, extra={"phase": "joint", "iterations": n_iter})
    return model


def run_baseline(kind: str, config: TrainConfig, model_config: SegmenterConfig, source_data, target_kshot, run=None):
    """Reference methods the pipeline is compared against."""
    if kind == "source_only":
        return pretrain_source(config, model_config, source_data, run=run)
    if kind == "joint_training":
        return _train_joint(config, model_config, source_data, target_kshot, run=run)
    if kind == "fine_tuning":
        pretrained = pretrain_source(config, model_config, source_data, run=run)
        return finetune_kd(replace(config, lambda_kd=0.0), pretrained, target_kshot, run=run)
    if kind == "image_wise_adversarial":
        pretrained = pretrain_source(config, model_config, source_data, run=run)
        return train_adversarial(
            config, pretrained, source_data, target_kshot,
            variant="image_wise", use_selection=False, run=run,
        )
    raise ValueError(f"unknown baseline {kind!r}; valid kinds: {BASELINE_KINDS}")


def run_method(
    method: str,
    config: TrainConfig,
    model_config: SegmenterConfig,
    source_data,
    target_kshot,
    eval_data,
    partition: ClassPartition = ClassPartition(),
    run=None,
):
    """Train by the named method and evaluate on the held-out target split."""
    if method == "pixda":
        pretrained = pretrain_source(config, model_config, source_data, run=run)
        teacher = train_adversarial(
            config, pretrained, source_data, target_kshot,
            variant="full", use_selection=True, run=run,
        )
        model = finetune_kd(config, teacher, target_kshot, run=run)
    elif method in BASELINE_KINDS:
        model = run_baseline(method, config, model_config, source_data, target_kshot, run=run)
    else:
        raise ValueError(
            f"unknown method {method!r}; valid methods: {('pixda',) + BASELINE_KINDS}"
        )
    report = evaluate(model, eval_data, partition)
    if run:
        save_report(report, run.run_dir / "final_metrics.json")
    return model, report
