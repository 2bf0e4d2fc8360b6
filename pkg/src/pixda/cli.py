"""Command-line entry points: generate / train / ablate / eval.

One structured JSON config per run; command-line flags only override paths,
the seed, and dry-run mode. Exit codes: 0 success, 2 config error, 3 data
error, 4 training failure.
"""

import argparse
import json
import statistics
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .benchmarks import (
    CHAIN_STAGES,
    IMAGE_WISE_LAMBDA,
    ABLATION_VARIANTS,
    ablation_grid,
    chain_grid,
    median_table,
    ablation_verdicts,
    chain_verdicts,
)
from .data import (
    DomainShift,
    ToySceneSpec,
    generate_toy_pair,
    kshot_select,
    load_dataset,
    save_dataset,
)
from .metrics import ClassPartition, evaluate, plot_per_class_iou, save_report
from .models import SegmenterConfig, load_checkpoint
from .trainer import (
    ADVERSARIAL_VARIANTS,
    BASELINE_KINDS,
    RunLogger,
    TrainConfig,
    TrainingError,
    run_method,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

METHODS = ("pixda",) + BASELINE_KINDS


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or fails schema validation."""


class DataError(ValueError):
    """Datasets or checkpoints referenced by the config cannot be used."""


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_path: str
    seed: int
    artifact_version: str
    output_dir: str

    def to_dict(self):
        return asdict(self)


def _load_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return payload


def _section(config: dict, name: str, required: bool = True) -> dict:
    value = config.get(name)
    if value is None:
        if required:
            raise ConfigError(f"config is missing the {name!r} section")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return value


def _require(section: dict, field: str, context: str):
    if field not in section:
        raise ConfigError(f"config field {context}.{field} is required")
    return section[field]


def _construct(factory, payload: dict, context: str):
    try:
        return factory(**payload)
    except TypeError as e:
        raise ConfigError(f"config section {context!r} has an unknown field: {e}") from e
    except ValueError as e:
        raise ConfigError(f"config section {context!r} is invalid: {e}") from e


def _scene_spec_from(config: dict) -> ToySceneSpec:
    payload = dict(config)
    shift = payload.pop("domain_shift", {})
    if not isinstance(shift, dict):
        raise ConfigError("config field domain_shift must be an object")
    payload["domain_shift"] = _construct(DomainShift, shift, "domain_shift")
    if "rare_object_classes" in payload:
        payload["rare_object_classes"] = frozenset(payload["rare_object_classes"])
    if "class_frequency_targets" in payload:
        payload["class_frequency_targets"] = tuple(payload["class_frequency_targets"])
    if "image_size" in payload:
        payload["image_size"] = tuple(payload["image_size"])
    return _construct(ToySceneSpec, payload, "scene spec")


def _model_config_from(config: dict) -> SegmenterConfig:
    return _construct(SegmenterConfig, _section(config, "model"), "model")


def _train_config_from(config: dict, seed_override=None) -> TrainConfig:
    payload = dict(_section(config, "train", required=False))
    if seed_override is not None:
        payload["seed"] = seed_override
    try:
        return TrainConfig.from_dict(payload)
    except TypeError as e:
        raise ConfigError(f"config section 'train' has an unknown field: {e}") from e
    except ValueError as e:
        raise ConfigError(f"config section 'train' is invalid: {e}") from e


def _partition_from(config: dict) -> ClassPartition:
    section = _section(config, "eval", required=False)
    return _construct(
        ClassPartition,
        {
            "well": tuple(section.get("well_classes", ())),
            "under": tuple(section.get("under_classes", ())),
        },
        "eval",
    )


def _load_split(root, name: str):
    try:
        items, meta = load_dataset(root)
    except (FileNotFoundError, NotADirectoryError, ValueError, OSError) as e:
        raise DataError(f"cannot load {name} dataset from {root}: {e}") from e
    if not items:
        raise DataError(f"{name} dataset at {root} is empty")
    return items, meta


def _load_run_data(config: dict):
    data = _section(config, "data")
    source, _ = _load_split(_require(data, "source_dir", "data"), "source")
    pool, _ = _load_split(_require(data, "target_dir", "data"), "target")
    eval_set, _ = _load_split(_require(data, "eval_dir", "data"), "eval")
    k = data.get("k_shot", 1)
    kshot_seed = data.get("kshot_seed", 0)
    try:
        kshot = kshot_select(pool, k=k, seed=kshot_seed)
    except ValueError as e:
        raise DataError(f"k-shot selection failed: {e}") from e
    return source, kshot, eval_set


def _write_manifest(out_dir: Path, command: str, config_path, seed: int, config: dict):
    run = RunLogger(out_dir)
    manifest = RunManifest(
        command=command,
        config_path=str(config_path),
        seed=seed,
        artifact_version=f"pixda-{__version__}",
        output_dir=str(out_dir),
    )
    run.write_json("manifest.json", manifest.to_dict())
    run.write_json("config_resolved.json", config)
    return run


def _resolve_output_dir(config: dict, override) -> Path:
    if override:
        return Path(override)
    out = config.get("output_dir")
    if not out:
        raise ConfigError("config field output_dir is required (or pass --output)")
    return Path(out)


def cmd_generate(args) -> int:
    config = _load_json(args.spec)
    counts = {k: config.pop(k, d) for k, d in
              (("n_source", 100), ("n_target", 10), ("n_cities", 1))}
    spec = _scene_spec_from(config)
    try:
        source, target = generate_toy_pair(
            spec, n_source=counts["n_source"], n_target=counts["n_target"],
            n_cities=counts["n_cities"],
        )
    except ValueError as e:
        raise ConfigError(f"invalid generation counts: {e}") from e
    out = Path(args.out)
    save_dataset(out / "source", source, meta={"domain": "source", "spec_seed": spec.seed})
    save_dataset(out / "target", target, meta={"domain": "target", "spec_seed": spec.seed})
    print(f"wrote {len(source)} source and {len(target)} target images under {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_json(args.config)
    method = config.get("method", "pixda")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {METHODS}")
    model_cfg = _model_config_from(config)
    train_cfg = _train_config_from(config, seed_override=args.seed)
    partition = _partition_from(config)
    out_dir = _resolve_output_dir(config, args.output)

    resolved = {
        "method": method,
        "model": asdict(model_cfg),
        "train": train_cfg.to_dict(),
        "eval": {"well_classes": list(partition.well), "under_classes": list(partition.under)},
        "data": _section(config, "data"),
        "output_dir": str(out_dir),
    }
    if args.dry_run:
        print(json.dumps(resolved, indent=2, sort_keys=True))
        return EXIT_OK

    source, kshot, eval_set = _load_run_data(config)
    run = _write_manifest(out_dir, "train", args.config, train_cfg.seed, resolved)
    _, rep = run_method(
        method, train_cfg, model_cfg, source, kshot, eval_set, partition, run=run
    )
    print(f"method={method} final mIoU={rep.miou:.4f} -> {out_dir / 'final_metrics.json'}")
    return EXIT_OK


def _format_row(name, cells):
    rare = cells.get("rare_iou")
    rare_txt = f" rare_iou={rare:.4f}" if rare is not None else ""
    return f"{name:12s} miou={cells['miou']:.4f}{rare_txt}"


def cmd_ablate(args) -> int:
    config = _load_json(args.config)
    variants = tuple(config.get("variants", ABLATION_VARIANTS))
    unknown = [v for v in variants if v not in ADVERSARIAL_VARIANTS]
    if unknown:
        raise ConfigError(
            f"unknown adversarial variant {unknown[0]!r}; valid variants: {ADVERSARIAL_VARIANTS}"
        )
    seeds = list(config.get("seeds", [0, 1, 2, 3, 4]))
    if not seeds:
        raise ConfigError("config field seeds must list at least one seed")
    run_chain = bool(config.get("chain", True))
    model_cfg = _model_config_from(config)
    train_cfg = _train_config_from(config, seed_override=args.seed)
    out_dir = _resolve_output_dir(config, args.output)

    source, kshot, eval_set = _load_run_data(config)
    rare_class = int(config.get("rare_class", model_cfg.class_count - 1))
    image_wise_lambda = config.get("image_wise_lambda", IMAGE_WISE_LAMBDA)
    if image_wise_lambda is not None:
        image_wise_lambda = float(image_wise_lambda)

    progress = print if args.verbose else None
    rows = ablation_grid(
        source, kshot, eval_set, model_cfg, train_cfg, variants, seeds,
        rare_class=rare_class, image_wise_lambda=image_wise_lambda, progress=progress,
    )
    medians = median_table(rows)
    verdicts = ablation_verdicts(medians)

    chain_rows, chain_medians, chain_checks = {}, {}, []
    if run_chain:
        chain_rows = chain_grid(
            source, kshot, eval_set, model_cfg, train_cfg, seeds,
            rare_class=rare_class, progress=progress,
        )
        chain_medians = median_table(chain_rows)
        chain_checks = chain_verdicts(chain_medians)

    print("variant medians over seeds " + str(seeds))
    for name in variants:
        print("  " + _format_row(name, medians[name]))
    if run_chain:
        print("component chain medians")
        for name in CHAIN_STAGES:
            print("  " + _format_row(name, chain_medians[name]))
    for verdict in verdicts + chain_checks:
        flag = "PASS" if verdict["passed"] else "FAIL"
        print(f"  {flag}  {verdict['comparison']}  margin={verdict['margin']:+.4f}")

    run = _write_manifest(out_dir, "ablate", args.config, train_cfg.seed, {
        "variants": list(variants), "seeds": seeds, "chain": run_chain,
        "image_wise_lambda": image_wise_lambda,
        "train": train_cfg.to_dict(), "model": asdict(model_cfg),
    })
    run.write_json("ablation_report.json", {
        "seeds": seeds,
        "image_wise_lambda": image_wise_lambda,
        "rows": rows,
        "medians": medians,
        "chain_rows": chain_rows,
        "chain_medians": chain_medians,
        "verdicts": verdicts + chain_checks,
    })
    print(f"report -> {out_dir / 'ablation_report.json'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, ValueError, RuntimeError) as e:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {e}") from e
    dataset, _ = _load_split(args.data, "eval")
    class_count = model.config.class_count
    seen = {int(v) for item in dataset for v in item.labels.unique().tolist()}
    out_of_range = sorted(v for v in seen if v != 255 and v >= class_count)
    if out_of_range:
        raise DataError(
            f"class-count mismatch: checkpoint has {class_count} classes but the "
            f"dataset contains label id {out_of_range[-1]}"
        )
    partition = ClassPartition()
    if args.partition:
        payload = _load_json(args.partition)
        partition = _construct(
            ClassPartition,
            {"well": tuple(payload.get("well", ())), "under": tuple(payload.get("under", ()))},
            "partition",
        )
        bad = [c for c in partition.well + partition.under if c >= class_count]
        if bad:
            raise ConfigError(f"partition lists class id {bad[-1]} beyond class count {class_count}")
    rep = evaluate(model, dataset, partition)
    out = Path(args.output) if args.output else Path("eval_report.json")
    save_report(rep, out)
    if args.plot:
        plot_per_class_iou(rep, out.with_suffix(".png"))
    miou = "n/a" if rep.miou is None else f"{rep.miou:.4f}"
    print(f"mIoU={miou} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixda",
        description="Few-shot adversarial domain adaptation for semantic segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a toy source/target dataset pair")
    p.add_argument("--spec", required=True, help="JSON scene spec file")
    p.add_argument("--out", required=True, help="output dataset root")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run one training method end to end")
    p.add_argument("--config", required=True, help="JSON run config file")
    p.add_argument("--output", help="override the config output_dir")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the variant and component ablation grids")
    p.add_argument("--config", required=True, help="JSON ablation config file")
    p.add_argument("--output", help="override the config output_dir")
    p.add_argument("--seed", type=int, help="override the base training seed")
    p.add_argument("--verbose", action="store_true", help="print per-run progress")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True, help="segmenter checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory (images/ + labels/)")
    p.add_argument("--partition", help="JSON file with well/under class-id lists")
    p.add_argument("--output", help="report path (default eval_report.json)")
    p.add_argument("--plot", action="store_true", help="also write a per-class IoU chart")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"training error: {e}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
