"""Reference toy benchmark and the ablation harness behind cmd_ablate.

The reference benchmark is sized for a few minutes of CPU: a 3-class scene
distribution with one rare class, a strong color-rotation domain shift with
per-image appearance jitter (so the handful of target shots does not trivially
cover the target appearance distribution), 200 source images, and a 1-shot
3-city target split.

Ablation conventions:
  - The "none" row is joint training from scratch on the pooled source +
    target shots at iteration parity with pretrain + alignment; the
    no-adversarial baseline is a single supervised run, not the two-phase
    pipeline with the alignment term deleted.
  - The "image_wise" row reproduces a different method (image-level
    output-space alignment) and runs at its own adversarial weight,
    IMAGE_WISE_LAMBDA by default. The pixel-wise rows are same-method term
    ablations and share the configured weight; a single weight for all rows
    would leave either the image-level baseline destructively strong or the
    pixel-wise terms inert.
  - Every adversarial row shares the same per-seed pretrained checkpoint and
    runs with sample selection off.
  - The component chain starts from the plain adversarial teacher (PixAdv),
    then adds sample selection, then fine-tuning (distillation weight zero),
    then full knowledge distillation.
"""

import copy
import statistics
from dataclasses import replace

from .data import DomainShift, ToySceneSpec, generate_toy_pair, kshot_select
from .metrics import evaluate
from .models import SegmenterConfig
from .trainer import (
    ADVERSARIAL_VARIANTS,
    OptimizerConfig,
    TrainConfig,
    _train_joint,
    finetune_kd,
    pretrain_source,
    train_adversarial,
)

ABLATION_VARIANTS = ("none", "image_wise", "pixel_plain", "pixel_b", "pixel_s", "full")
CHAIN_STAGES = ("pixadv", "selection", "fine_tune", "kd")
REFERENCE_SEEDS = (0, 1, 2, 3, 4)
RARE_CLASS = 2

# pass thresholds for the ordering verdicts, in mIoU fraction units
FULL_MARGIN = 0.005  # full PixAdv must clear each single-term variant by this
CHAIN_TOLERANCE = 0.002  # later chain stages may dip below the previous by at most this
RARE_MARGIN = 0.02  # full vs image-wise gap on the rare class

# operating point for the image-level baseline row (see module docstring)
IMAGE_WISE_LAMBDA = 0.003


def reference_scene_spec(data_seed: int = 0) -> ToySceneSpec:
    return ToySceneSpec(
        class_count=3,
        class_frequency_targets=(0.72, 0.25, 0.03),
        rare_object_classes=frozenset({RARE_CLASS}),
        domain_shift=DomainShift(
            hue_shift=1.5, noise_sigma=0.05, horizon_offset=0.08, appearance_jitter=1.2
        ),
        image_size=(32, 32),
        seed=data_seed,
    )


def reference_model_config() -> SegmenterConfig:
    return SegmenterConfig(class_count=3, base_channels=8, depth=3, output_stride=2)


def reference_train_config() -> TrainConfig:
    """Hyperparameters rescaled for the few-hundred-iteration toy regime.

    The selection scorer runs at a much lower rate than the adversarial
    discriminators and the pruning threshold starts just above its early-epoch
    score band, so the first epoch removes the most source-like tail of the
    pool and the doubled threshold stays out of reach afterwards. At the
    shared discriminator rate the unopposed scorer saturates within one epoch
    and any threshold empties the pool.
    """
    return TrainConfig(
        lambda_adv=3.0,
        lambda_kd=0.5,
        tau=0.5,
        batch_size=4,
        delta0=0.6,
        pretrain_iterations=800,
        iterations_per_epoch=40,
        max_adv_epochs=8,
        kd_iterations=100,
        seg_optimizer=OptimizerConfig(kind="sgd", lr=2.5e-3, momentum=0.9, weight_decay=5e-4),
        disc_optimizer=OptimizerConfig(kind="adam", lr=1e-3, betas=(0.9, 0.99)),
        disc_input_noise=0.1,
        selection_disc_lr=3e-5,
        seed=0,
    )


N_SOURCE = 200
N_CITIES = 3
PER_CITY_POOL = 3
PER_CITY_EVAL = 15
K_SHOT = 1
KSHOT_SEED = 0


def build_reference_data(data_seed: int = 0):
    """Source set, k-shot target training set, and held-out target eval split."""
    spec = reference_scene_spec(data_seed)
    per_city = PER_CITY_POOL + PER_CITY_EVAL
    source, target = generate_toy_pair(
        spec, n_source=N_SOURCE, n_target=per_city * N_CITIES, n_cities=N_CITIES
    )
    pool, eval_set, seen = [], [], {}
    for item in target:
        taken = seen.get(item.city, 0)
        (pool if taken < PER_CITY_POOL else eval_set).append(item)
        seen[item.city] = taken + 1
    kshot = kshot_select(pool, k=K_SHOT, seed=KSHOT_SEED)
    return source, kshot, eval_set


def _median(values):
    return statistics.median(values)


def _rare_iou(rep, rare_class: int):
    value = rep.per_class_iou[rare_class] if rare_class < len(rep.per_class_iou) else None
    return 0.0 if value is None else value


def _joint_parity_config(cfg: TrainConfig) -> TrainConfig:
    extra = cfg.max_adv_epochs * cfg.iterations_per_epoch
    return replace(cfg, pretrain_iterations=cfg.pretrain_iterations + extra)


def ablation_grid(source, kshot, eval_set, model_cfg, cfg, variants, seeds,
                  rare_class: int = RARE_CLASS, image_wise_lambda=IMAGE_WISE_LAMBDA,
                  progress=None):
    """Per-variant mIoU / rare-class IoU lists across seeds.

    ``image_wise_lambda`` sets the adversarial weight for the image-level
    baseline row; pass None to run it at the shared configured weight.
    """
    unknown = [v for v in variants if v not in ADVERSARIAL_VARIANTS]
    if unknown:
        raise ValueError(
            f"unknown adversarial variant {unknown[0]!r}; valid variants: {ADVERSARIAL_VARIANTS}"
        )
    rows = {v: {"miou": [], "rare_iou": []} for v in variants}
    needs_pretrain = any(v != "none" for v in variants)
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed)
        pretrained = (
            pretrain_source(seed_cfg, model_cfg, source) if needs_pretrain else None
        )
        for variant in variants:
            if variant == "none":
                model = _train_joint(_joint_parity_config(seed_cfg), model_cfg, source, kshot)
            else:
                run_cfg = seed_cfg
                if variant == "image_wise" and image_wise_lambda is not None:
                    run_cfg = replace(seed_cfg, lambda_adv=image_wise_lambda)
                model = copy.deepcopy(pretrained)
                train_adversarial(run_cfg, model, source, kshot, variant=variant, use_selection=False)
            rep = evaluate(model, eval_set)
            rows[variant]["miou"].append(rep.miou)
            rows[variant]["rare_iou"].append(_rare_iou(rep, rare_class))
            if progress:
                progress(f"seed {seed} variant {variant}: miou={rep.miou:.4f}")
    return rows


def chain_grid(source, kshot, eval_set, model_cfg, cfg, seeds,
               rare_class: int = RARE_CLASS, progress=None):
    """Component-chain mIoU lists across seeds, one stage added at a time."""
    rows = {stage: {"miou": [], "rare_iou": []} for stage in CHAIN_STAGES}

    def record(stage, model):
        rep = evaluate(model, eval_set)
        rows[stage]["miou"].append(rep.miou)
        rows[stage]["rare_iou"].append(_rare_iou(rep, rare_class))
        if progress:
            progress(f"chain stage {stage}: miou={rep.miou:.4f}")

    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed)
        pretrained = pretrain_source(seed_cfg, model_cfg, source)

        pixadv = copy.deepcopy(pretrained)
        train_adversarial(seed_cfg, pixadv, source, kshot, variant="full", use_selection=False)
        record("pixadv", pixadv)

        teacher = copy.deepcopy(pretrained)
        train_adversarial(seed_cfg, teacher, source, kshot, variant="full", use_selection=True)
        record("selection", teacher)

        finetuned = finetune_kd(replace(seed_cfg, lambda_kd=0.0), teacher, kshot)
        record("fine_tune", finetuned)

        distilled = finetune_kd(seed_cfg, teacher, kshot)
        record("kd", distilled)
    return rows


def median_table(rows):
    return {
        name: {key: _median(values) for key, values in cells.items()}
        for name, cells in rows.items()
    }


def _verdict(name, passed, margin):
    return {"comparison": name, "passed": bool(passed), "margin": margin}


def ablation_verdicts(medians):
    """Ordering checks over the variant medians; skips comparisons lacking rows."""
    verdicts = []

    def miou(name):
        return medians[name]["miou"]

    if "none" in medians and "image_wise" in medians:
        gap = miou("image_wise") - miou("none")
        verdicts.append(_verdict("none < image_wise", gap > 0, gap))
    if "image_wise" in medians and "pixel_plain" in medians:
        gap = miou("pixel_plain") - miou("image_wise")
        verdicts.append(_verdict("image_wise < pixel_plain", gap > 0, gap))
    for single in ("pixel_b", "pixel_s"):
        if "full" in medians and single in medians:
            gap = miou("full") - miou(single)
            verdicts.append(
                _verdict(f"full >= {single} + {FULL_MARGIN}", gap >= FULL_MARGIN, gap)
            )
    if "full" in medians and "image_wise" in medians:
        gap = medians["full"]["rare_iou"] - medians["image_wise"]["rare_iou"]
        verdicts.append(
            _verdict(f"rare-class: full >= image_wise + {RARE_MARGIN}", gap >= RARE_MARGIN, gap)
        )
    return verdicts


def chain_verdicts(medians):
    """Chain checks: each addition within tolerance, full pipeline beats PixAdv."""
    verdicts = []
    for prev, cur in zip(CHAIN_STAGES, CHAIN_STAGES[1:]):
        if prev in medians and cur in medians:
            gap = medians[cur]["miou"] - medians[prev]["miou"]
            verdicts.append(
                _verdict(f"{cur} >= {prev} - {CHAIN_TOLERANCE}", gap >= -CHAIN_TOLERANCE, gap)
            )
    if "pixadv" in medians and "kd" in medians:
        gap = medians["kd"]["miou"] - medians["pixadv"]["miou"]
        verdicts.append(_verdict("kd > pixadv", gap > 0, gap))
    return verdicts
