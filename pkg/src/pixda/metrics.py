"""Confusion-matrix accumulation and IoU reporting with class-group splits."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .losses import IGNORE_INDEX


@dataclass(frozen=True)
class ClassPartition:
    """Disjoint well/under-represented class-id groups for split aggregates."""

    well: tuple = ()
    under: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "well", tuple(sorted(self.well)))
        object.__setattr__(self, "under", tuple(sorted(self.under)))
        if set(self.well) & set(self.under):
            raise ValueError("well and under class sets overlap")


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray
    per_class_iou: tuple  # float per class, None where the union is zero
    miou: float | None
    miou_well: float | None
    miou_under: float | None
    class_partition: ClassPartition

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "per_class_iou": list(self.per_class_iou),
            "miou": self.miou,
            "miou_well": self.miou_well,
            "miou_under": self.miou_under,
            "class_partition": {
                "well": list(self.class_partition.well),
                "under": list(self.class_partition.under),
            },
        }


def new_confusion(class_count: int) -> np.ndarray:
    if class_count < 1:
        raise ValueError(f"class_count must be >= 1, got {class_count}")
    return np.zeros((class_count, class_count), dtype=np.int64)


def accumulate(confusion: np.ndarray, prediction, truth) -> np.ndarray:
    """Add one image's pixel counts: confusion[truth][prediction] += 1.

    Pixels whose truth equals the ignore index are skipped. Predictions must
    be argmax outputs, so an ignore sentinel there is an error.
    """
    pred = np.asarray(prediction)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs truth {true.shape}")
    c = confusion.shape[0]
    if (pred == IGNORE_INDEX).any():
        raise ValueError(f"prediction contains the ignore sentinel {IGNORE_INDEX}")
    valid = true != IGNORE_INDEX
    pred, true = pred[valid], true[valid]
    if pred.size == 0:
        return confusion
    if pred.min() < 0 or pred.max() >= c:
        raise ValueError(f"prediction values outside [0, {c})")
    if true.min() < 0 or true.max() >= c:
        raise ValueError(f"truth values outside [0, {c}) (other than ignore)")
    flat = np.bincount(true * c + pred, minlength=c * c).reshape(c, c)
    confusion += flat
    return confusion


def _mean_over(ious, class_ids):
    present = [ious[c] for c in class_ids if ious[c] is not None]
    return sum(present) / len(present) if present else None


def report(
    confusion: np.ndarray,
    partition: ClassPartition = ClassPartition(),
    zero_union_mode: str = "exclude",
) -> MetricsReport:
    """Per-class IoU = TP / (TP + FP + FN), plus overall and split means.

    zero_union_mode "exclude" drops never-seen classes from every mean;
    "zero" scores them 0, the convention for reporting over a fixed class set.
    """
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(f"confusion must be square, got {confusion.shape}")
    if (confusion < 0).any():
        raise ValueError("confusion entries must be non-negative")
    if zero_union_mode not in ("exclude", "zero"):
        raise ValueError(f"unknown zero_union_mode {zero_union_mode!r}")
    c = confusion.shape[0]
    for group in (partition.well, partition.under):
        if any(not 0 <= k < c for k in group):
            raise ValueError(f"partition class ids must lie in [0, {c})")

    ious = []
    for k in range(c):
        tp = int(confusion[k, k])
        union = int(confusion[k, :].sum()) + int(confusion[:, k].sum()) - tp
        if union == 0:
            ious.append(0.0 if zero_union_mode == "zero" else None)
        else:
            ious.append(tp / union)
    return MetricsReport(
        confusion=confusion.copy(),
        per_class_iou=tuple(ious),
        miou=_mean_over(ious, range(c)),
        miou_well=_mean_over(ious, partition.well),
        miou_under=_mean_over(ious, partition.under),
        class_partition=partition,
    )


def prediction_from_logits(logits: torch.Tensor, label_shape) -> torch.Tensor:
    """Argmax class map, nearest-upsampled to the label resolution."""
    if logits.dim() != 3:
        raise ValueError(f"expected (C, H, W) logits, got shape {tuple(logits.shape)}")
    pred = logits.argmax(dim=0)
    if tuple(pred.shape) != tuple(label_shape):
        pred = (
            F.interpolate(
                pred[None, None].to(torch.float32), size=tuple(label_shape), mode="nearest"
            )
            .squeeze()
            .to(torch.long)
        )
    return pred


def evaluate(model, dataset, partition: ClassPartition = ClassPartition()) -> MetricsReport:
    """Aggregate a dataset into one MetricsReport using the model's argmax."""
    from .models import segment  # local import keeps module load order flexible

    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    confusion = new_confusion(model.config.class_count)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for item in dataset:
            logits = segment(model, item.image)
            pred = prediction_from_logits(logits, item.labels.shape)
            accumulate(confusion, pred.numpy(), item.labels.numpy())
    if was_training:
        model.train()
    return report(confusion, partition)


def save_report(rep: MetricsReport, path):
    """Write the report as JSON: confusion, per_class_iou, miou, splits."""
    Path(path).write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))


def load_report_dict(path) -> dict:
    return json.loads(Path(path).read_text())


def plot_per_class_iou(rep: MetricsReport, path):
    """Optional bar chart of per-class IoU; zero-union classes drawn empty."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    values = [v if v is not None else 0.0 for v in rep.per_class_iou]
    fig, ax = plt.subplots(figsize=(max(4, len(values) * 0.6), 3))
    ax.bar(range(len(values)), values, color="steelblue")
    ax.set_xlabel("class id")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    if rep.miou is not None:
        ax.axhline(rep.miou, color="firebrick", linestyle="--", linewidth=1, label="mIoU")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
