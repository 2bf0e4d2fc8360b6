"""End-to-end command-line tests on tiny configurations."""

import json
from pathlib import Path

import pytest
import torch

from pixda.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from pixda.data import load_dataset
from pixda.metrics import load_report_dict
from pixda.models import Segmenter, SegmenterConfig, save_checkpoint


def _write(path: Path, payload: dict) -> str:
    path.write_text(json.dumps(payload))
    return str(path)


def _spec_payload(**overrides):
    payload = {
        "class_count": 3,
        "class_frequency_targets": [0.7, 0.25, 0.05],
        "rare_object_classes": [2],
        "domain_shift": {"hue_shift": 0.8, "noise_sigma": 0.03, "horizon_offset": 0.05},
        "image_size": [32, 32],
        "seed": 7,
        "n_source": 8,
        "n_target": 6,
        "n_cities": 3,
    }
    payload.update(overrides)
    return payload


@pytest.fixture(scope="module")
def toy_dirs(tmp_path_factory):
    """One generated dataset tree shared by the training-path tests."""
    root = tmp_path_factory.mktemp("toydata")
    spec = _write(root / "spec.json", _spec_payload())
    assert main(["generate", "--spec", spec, "--out", str(root / "data")]) == EXIT_OK
    return root


def _train_payload(root: Path, out_name: str, **train_overrides):
    train = {
        "batch_size": 2,
        "pretrain_iterations": 4,
        "iterations_per_epoch": 2,
        "max_adv_epochs": 2,
        "kd_iterations": 2,
        "seed": 0,
    }
    train.update(train_overrides)
    return {
        "method": "pixda",
        "output_dir": str(root / out_name),
        "data": {
            "source_dir": str(root / "data" / "source"),
            "target_dir": str(root / "data" / "target"),
            "eval_dir": str(root / "data" / "target"),
            "k_shot": 1,
            "kshot_seed": 0,
        },
        "model": {"class_count": 3, "base_channels": 4, "depth": 2, "output_stride": 2},
        "train": train,
    }


def test_generate_round_trip_and_determinism(tmp_path):
    spec = _write(tmp_path / "spec.json", _spec_payload(seed=3))
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "b")]) == EXIT_OK
    for split in ("source", "target"):
        items_a, meta_a = load_dataset(tmp_path / "a" / split)
        items_b, meta_b = load_dataset(tmp_path / "b" / split)
        assert meta_a == meta_b
        assert [i.id for i in items_a] == [i.id for i in items_b]
        for x, y in zip(items_a, items_b):
            assert torch.equal(x.labels, y.labels)
            assert torch.equal(x.image, y.image)
    cities = {i.city for i in load_dataset(tmp_path / "a" / "target")[0]}
    assert len(cities) == 3


def test_generate_rejects_bad_spec(tmp_path, capsys):
    spec = _write(tmp_path / "spec.json", _spec_payload(class_count=0))
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "class_count" in capsys.readouterr().err


def test_train_dry_run_prints_resolved_config(toy_dirs, capsys):
    cfg = _write(toy_dirs / "cfg_dry.json", _train_payload(toy_dirs, "run_dry"))
    assert main(["train", "--config", cfg, "--dry-run"]) == EXIT_OK
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["method"] == "pixda"
    assert resolved["train"]["pretrain_iterations"] == 4
    assert not (toy_dirs / "run_dry").exists()


def test_train_smoke_run_writes_artifacts(toy_dirs):
    cfg = _write(toy_dirs / "cfg_run.json", _train_payload(toy_dirs, "run1"))
    assert main(["train", "--config", cfg]) == EXIT_OK
    run = toy_dirs / "run1"
    for name in ("manifest.json", "config_resolved.json", "final_metrics.json",
                 "pretrain.pt", "teacher.pt", "final.pt", "metrics.jsonl"):
        assert (run / name).exists(), name
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["seed"] == 0
    report = load_report_dict(run / "final_metrics.json")
    assert 0.0 <= report["miou"] <= 1.0


def test_train_determinism_of_final_metrics(toy_dirs):
    cfg_a = _write(toy_dirs / "cfg_det_a.json", _train_payload(toy_dirs, "det_a"))
    cfg_b = _write(toy_dirs / "cfg_det_b.json", _train_payload(toy_dirs, "det_b"))
    assert main(["train", "--config", cfg_a]) == EXIT_OK
    assert main(["train", "--config", cfg_b]) == EXIT_OK
    rep_a = (toy_dirs / "det_a" / "final_metrics.json").read_text()
    rep_b = (toy_dirs / "det_b" / "final_metrics.json").read_text()
    assert rep_a == rep_b


def test_train_routes_baseline_method(toy_dirs):
    payload = _train_payload(toy_dirs, "run_joint")
    payload["method"] = "joint_training"
    cfg = _write(toy_dirs / "cfg_joint.json", payload)
    assert main(["train", "--config", cfg]) == EXIT_OK
    run = toy_dirs / "run_joint"
    assert (run / "final_metrics.json").exists()
    phases = {
        json.loads(line)["phase"] for line in (run / "metrics.jsonl").read_text().splitlines()
    }
    assert phases == {"joint"}


def test_train_config_errors(toy_dirs, tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG

    bad = _train_payload(toy_dirs, "bad")
    bad["train"]["lambda_adv"] = -1
    cfg = _write(tmp_path / "bad.json", bad)
    assert main(["train", "--config", cfg]) == EXIT_CONFIG
    assert "lambda_adv" in capsys.readouterr().err

    unknown = _train_payload(toy_dirs, "bad2")
    unknown["method"] = "mystery"
    cfg = _write(tmp_path / "bad2.json", unknown)
    assert main(["train", "--config", cfg]) == EXIT_CONFIG


def test_train_missing_data_is_a_data_error(toy_dirs, tmp_path):
    payload = _train_payload(toy_dirs, "nodata")
    payload["data"]["source_dir"] = str(tmp_path / "nowhere")
    cfg = _write(tmp_path / "nodata.json", payload)
    assert main(["train", "--config", cfg]) == EXIT_DATA


def test_ablate_single_variant_rows_and_determinism(toy_dirs):
    payload = _train_payload(toy_dirs, "ablate1")
    payload.pop("method")
    payload["variants"] = ["pixel_plain"]
    payload["seeds"] = [0, 0]
    payload["chain"] = False
    cfg = _write(toy_dirs / "cfg_ablate.json", payload)
    assert main(["ablate", "--config", cfg]) == EXIT_OK
    report = json.loads((toy_dirs / "ablate1" / "ablation_report.json").read_text())
    assert list(report["rows"].keys()) == ["pixel_plain"]
    mious = report["rows"]["pixel_plain"]["miou"]
    assert len(mious) == 2 and mious[0] == mious[1]
    assert report["medians"]["pixel_plain"]["miou"] == mious[0]


def test_ablate_unknown_variant(toy_dirs, tmp_path, capsys):
    payload = _train_payload(toy_dirs, "ablate_bad")
    payload["variants"] = ["pixel_quantum"]
    cfg = _write(tmp_path / "cfg_bad_variant.json", payload)
    assert main(["ablate", "--config", cfg]) == EXIT_CONFIG
    assert "pixel_quantum" in capsys.readouterr().err


def test_ablate_chain_emits_verdicts(toy_dirs):
    payload = _train_payload(toy_dirs, "ablate_chain")
    payload["variants"] = ["image_wise", "full"]
    payload["seeds"] = [0]
    payload["chain"] = True
    cfg = _write(toy_dirs / "cfg_ablate_chain.json", payload)
    assert main(["ablate", "--config", cfg]) == EXIT_OK
    report = json.loads((toy_dirs / "ablate_chain" / "ablation_report.json").read_text())
    assert set(report["chain_rows"].keys()) == {"pixadv", "selection", "fine_tune", "kd"}
    comparisons = {v["comparison"] for v in report["verdicts"]}
    assert any("kd > pixadv" in c for c in comparisons)


def test_eval_reports_and_repeats(toy_dirs, tmp_path):
    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2))
    ckpt = tmp_path / "model.pt"
    save_checkpoint(ckpt, model)
    out = tmp_path / "report.json"
    args = ["eval", "--checkpoint", str(ckpt), "--data", str(toy_dirs / "data" / "target"),
            "--output", str(out)]
    assert main(args) == EXIT_OK
    first = out.read_text()
    assert main(args) == EXIT_OK
    assert out.read_text() == first
    report = load_report_dict(out)
    assert len(report["per_class_iou"]) == 3


def test_eval_class_count_mismatch(toy_dirs, tmp_path, capsys):
    model = Segmenter(SegmenterConfig(class_count=2, base_channels=4, depth=2))
    ckpt = tmp_path / "small.pt"
    save_checkpoint(ckpt, model)
    code = main(["eval", "--checkpoint", str(ckpt), "--data", str(toy_dirs / "data" / "target")])
    assert code == EXIT_DATA
    assert "class-count mismatch" in capsys.readouterr().err


def test_eval_empty_dataset_errors(tmp_path):
    (tmp_path / "empty" / "images").mkdir(parents=True)
    (tmp_path / "empty" / "labels").mkdir(parents=True)
    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2))
    ckpt = tmp_path / "m.pt"
    save_checkpoint(ckpt, model)
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(tmp_path / "empty")]) == EXIT_DATA


def test_eval_plot_written(toy_dirs, tmp_path):
    model = Segmenter(SegmenterConfig(class_count=3, base_channels=4, depth=2))
    ckpt = tmp_path / "m.pt"
    save_checkpoint(ckpt, model)
    out = tmp_path / "rep.json"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(toy_dirs / "data" / "target"),
                 "--output", str(out), "--plot"]) == EXIT_OK
    assert out.with_suffix(".png").exists()
