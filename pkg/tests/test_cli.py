import csv
import json
import math

import numpy as np
import pytest

from volsynth.cli import main, read_pgm, sha256
from volsynth.metrics import AGGREGATE_ID, csv_header, read_reports_csv
from volsynth.volgrid import read_volume

TINY_TRAIN = {
    "epochs": 2, "batch_size": 2, "patches_per_volume_per_epoch": 1, "patch_shape": [8, 8, 8],
    "model": {"levels": 2, "base_channels": 2, "kernel": [3, 3, 3], "residual_output": True},
    "critic": {"base_channels": 2}, "perceptual": {"widths": [2, 2, 2]}, "critic_steps": 2,
}


def write_config(path, data_dir, out_dir, **train):
    doc = {"schema_version": 1, "output_dir": str(out_dir), "dataset": {"dir": str(data_dir)},
           "train": {**TINY_TRAIN, **train}}
    path.write_text(json.dumps(doc))
    return str(path)


def checksums(d, skip=("timing.json",)):
    return {p.relative_to(d).as_posix(): sha256(p) for p in sorted(d.rglob("*")) if p.is_file() and p.name not in skip}


@pytest.fixture(scope="module")
def data16(tmp_path_factory):
    d = tmp_path_factory.mktemp("data16")
    assert main(["phantom", "--count", "8", "--shape", "16", "--seed", "0", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data16):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json", data16, root / "out")
    assert main(["train", "--config", cfg]) == 0
    return root / "out"


# phantom -----------------------------------------------------------------------------

def test_phantom_files_manifest_and_reload(data16, tmp_path):
    nii = sorted(p.name for p in data16.glob("*.nii"))
    assert len(nii) == 16 and nii[:2] == ["sub-000_high.nii", "sub-000_low.nii"]
    manifest = json.loads((data16 / "dataset_manifest.json").read_text())
    assert manifest["count"] == 8 and len(manifest["files"]) == 16
    for name in nii:
        v = read_volume(data16 / name)
        assert v.shape == (16, 16, 16)
        assert manifest["files"][name] == sha256(data16 / name)
    again = tmp_path / "again"
    assert main(["phantom", "--count", "8", "--shape", "16", "--seed", "0", "--out", str(again)]) == 0
    assert checksums(again) == checksums(data16)


def test_phantom_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["phantom", "--count", "1", "--shape", "8", "--out", str(blocker / "sub")]) == 2


# config errors ---------------------------------------------------------------------------

def test_unknown_config_key_exit_2(tmp_path, data16, capsys):
    cfg = write_config(tmp_path / "c.json", data16, tmp_path / "o", lr_rate=0.1)
    assert main(["train", "--config", cfg]) == 2
    assert "train.lr_rate" in capsys.readouterr().err


def test_invalid_values_exit_2(tmp_path, data16):
    for bad in ({"variant": "unet"}, {"lr": -1}, {"patch_shape": [7, 7, 7]}):
        cfg = write_config(tmp_path / "c.json", data16, tmp_path / "o", **bad)
        assert main(["train", "--config", cfg]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2


def test_missing_dataset_exit_2(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "nowhere", tmp_path / "o")
    assert main(["train", "--config", cfg]) == 2


# train -----------------------------------------------------------------------------------

def test_train_artifacts(trained):
    for name in ("resolved_config.json", "model.ckpt", "training_log.csv", "manifest.json", "timing.json"):
        assert (trained / name).is_file()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"resolved_config.json", "model.ckpt", "training_log.csv"}
    assert manifest["outputs"]["model.ckpt"] == sha256(trained / "model.ckpt")
    assert manifest["config"] == json.loads((trained / "resolved_config.json").read_text())
    assert not (trained / "critic.ckpt").exists()


def test_train_rerun_is_checksum_identical(trained, tmp_path):
    before = checksums(trained)
    cfg = trained.parent / "cfg.json"
    assert main(["train", "--config", str(cfg)]) == 0
    assert checksums(trained) == before


def test_resolved_config_replays_run(trained, tmp_path):
    cfg = tmp_path / "replay.json"
    doc = json.loads((trained / "resolved_config.json").read_text())
    doc["output_dir"] = str(tmp_path / "replay")
    cfg.write_text(json.dumps(doc))
    assert main(["train", "--config", str(cfg)]) == 0
    for name in ("model.ckpt", "training_log.csv"):
        assert sha256(tmp_path / "replay" / name) == sha256(trained / name)


def test_seed_flag_changes_checkpoint(trained, tmp_path):
    cfg = trained.parent / "cfg.json"
    assert main(["train", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "s7")]) == 0
    assert sha256(tmp_path / "s7" / "model.ckpt") != sha256(trained / "model.ckpt")


def test_train_gan_routes_to_gan_loop(tmp_path, data16):
    cfg = write_config(tmp_path / "c.json", data16, tmp_path / "gan", variant="vnet_gan", epochs=1)
    assert main(["train", "--config", cfg]) == 0
    with open(tmp_path / "gan" / "training_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["phase"] for r in rows} == {"critic", "generator"}
    assert all(r["critic"] != "" for r in rows if r["phase"] == "critic")
    assert (tmp_path / "gan" / "critic.ckpt").is_file()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_exit_3(tmp_path, data16, capsys):
    cfg = write_config(tmp_path / "c.json", data16, tmp_path / "o", lr=1e38, epochs=3)
    assert main(["train", "--config", cfg]) == 3
    assert "diverged" in capsys.readouterr().err


# infer -----------------------------------------------------------------------------------

def test_infer_single_and_downsampled(trained, data16, tmp_path):
    ckpt = str(trained / "model.ckpt")
    src = data16 / "sub-003_low.nii"
    assert main(["infer", "--checkpoint", ckpt, "--input", str(src), "--output", str(tmp_path / "p.nii")]) == 0
    m = json.loads((tmp_path / "infer_manifest.json").read_text())
    assert m["condition"] == "original" and m["condition_label"] == "Original resolution"
    assert read_volume(tmp_path / "p.nii").shape == read_volume(src).shape

    out = tmp_path / "ds"
    assert main(["infer", "--checkpoint", ckpt, "--input", str(data16), "--output", str(out), "--downsample", "2"]) == 0
    m = json.loads((out / "infer_manifest.json").read_text())
    assert m["condition_label"] == "Downsampled (s=2)" and m["condition"] == "downsampled_s2"
    preds = sorted(p.name for p in out.glob("*_pred.nii"))
    assert len(preds) == 8
    assert read_volume(out / "sub-000_pred.nii").shape == (16, 16, 16)
    assert not np.array_equal(read_volume(out / "sub-003_pred.nii").data, read_volume(tmp_path / "p.nii").data)


def test_infer_incompatible_checkpoint_exit_4(trained, data16, tmp_path):
    args = ["infer", "--checkpoint", str(trained / "model.ckpt"), "--input", str(data16 / "sub-000_low.nii"),
            "--output", str(tmp_path / "p.nii")]
    assert main(args + ["--variant", "watnet"]) == 4
    assert main(args + ["--variant", "vnet_gan"]) == 0  # same generator architecture


def test_infer_corrupt_checkpoint_and_missing_input(trained, data16, tmp_path):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray((trained / "model.ckpt").read_bytes())
    raw[-5] ^= 0xFF
    bad.write_bytes(bytes(raw))
    args = ["--input", str(data16 / "sub-000_low.nii"), "--output", str(tmp_path / "p.nii")]
    assert main(["infer", "--checkpoint", str(bad)] + args) == 2
    assert main(["infer", "--checkpoint", str(trained / "model.ckpt"), "--input", str(tmp_path / "none.nii"),
                 "--output", str(tmp_path / "p.nii")]) == 2


# evaluate --------------------------------------------------------------------------------

def test_evaluate_identical_dirs(data16, tmp_path):
    out = tmp_path / "eval" / "report.csv"
    assert main(["evaluate", "--pred", str(data16), "--ref", str(data16), "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(csv_header(4))
    reports, aggs = read_reports_csv(out)
    assert len(reports) == 8 and len(aggs) == 1
    assert all(abs(r.ssim - 1.0) < 1e-9 and math.isinf(r.psnr_db) for r in reports)
    montages = sorted((tmp_path / "eval" / "montages").glob("*.pgm"))
    assert [p.stem for p in montages] == [f"sub-{i:03d}" for i in range(8)]
    img = read_pgm(montages[0])
    assert img.dtype == np.uint8 and img.shape[0] == 2 * (16 + 2)


def test_evaluate_id_mismatch_lists_missing(data16, tmp_path, capsys):
    pred = tmp_path / "pred"
    pred.mkdir()
    for i in (0, 1):
        (pred / f"sub-{i:03d}_pred.nii").write_bytes((data16 / f"sub-{i:03d}_high.nii").read_bytes())
    assert main(["evaluate", "--pred", str(pred), "--ref", str(data16), "--out", str(tmp_path / "r.csv")]) == 2
    err = capsys.readouterr().err
    assert "sub-002" in err and "sub-007" in err


def test_evaluate_rerun_identical(data16, tmp_path):
    out = tmp_path / "e" / "r.csv"
    args = ["evaluate", "--pred", str(data16), "--ref", str(data16), "--out", str(out), "--num-classes", "3"]
    assert main(args) == 0
    first = checksums(out.parent)
    assert main(args) == 0
    assert checksums(out.parent) == first
    assert out.read_text(encoding="utf-8").splitlines()[0] == ",".join(csv_header(3))


# augment ---------------------------------------------------------------------------------

def test_augment_15_to_45(tmp_path):
    data = tmp_path / "d15"
    assert main(["phantom", "--count", "15", "--shape", "16", "--out", str(data)]) == 0
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "aug")
    assert main(["augment", "--config", cfg, "--seed", "4"]) == 0
    out = tmp_path / "aug" / "augmented"
    assert len(list(out.glob("*_low.nii"))) == 45 and len(list(out.glob("*_high.nii"))) == 45
    records = json.loads((out / "augment_manifest.json").read_text())["pairs"]
    assert len(records) == 45
    drawn = [r["transform"] for r in records if r["transform"] is not None]
    assert len(drawn) == 30
    for t in drawn:
        assert math.exp(-0.3) - 1e-12 <= t["gamma"] <= math.exp(0.3) + 1e-12
        assert 1.0 <= t["downsample"] <= 5.0
    first = checksums(tmp_path / "aug")
    assert main(["augment", "--config", cfg, "--seed", "4"]) == 0
    assert checksums(tmp_path / "aug") == first


# crossval --------------------------------------------------------------------------------

def test_crossval_loo_rows_and_aggregate(tmp_path, data16):
    cfg = write_config(tmp_path / "c.json", data16, tmp_path / "cv", epochs=1)
    assert main(["crossval", "--config", cfg]) == 0
    out = tmp_path / "cv"
    reports, aggs = read_reports_csv(out / "cv_report.csv")
    assert len(reports) == 8 and len(aggs) == 1 and aggs[0]["subject_id"] == AGGREGATE_ID
    assert sorted(r.fold for r in reports) == list(range(8))
    assert len(list(out.glob("fold*_training_log.csv"))) == 8
    summary = json.loads((out / "cv_summary.json").read_text())
    assert summary["labels"] == {"original": "Original resolution"}
    assert all(len(f["held_out"]) == 1 for f in summary["plan"]["folds"])


def test_crossval_kfold_6_over_18(tmp_path):
    data = tmp_path / "d18"
    assert main(["phantom", "--count", "18", "--shape", "16", "--out", str(data)]) == 0
    cfg = write_config(tmp_path / "c.json", data, tmp_path / "cv", epochs=1)
    assert main(["crossval", "--config", cfg, "--plan", "kfold:6"]) == 0
    reports, _ = read_reports_csv(tmp_path / "cv" / "cv_report.csv")
    assert len(reports) == 18
    assert sorted(set(r.fold for r in reports)) == list(range(6))
    assert all(sum(r.fold == k for r in reports) == 3 for k in range(6))


def test_crossval_invalid_plan_exit_2(tmp_path, data16):
    cfg = write_config(tmp_path / "c.json", data16, tmp_path / "cv")
    for plan in ("kfold:1", "kfold:9", "holdout", "kfold:x"):
        assert main(["crossval", "--config", cfg, "--plan", plan]) == 2
