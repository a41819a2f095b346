import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from eegvis.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from eegvis.data import EEGRecord, write_container


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("make-synthetic", "--out", root / "syn", "--classes", 3, "--per-class", 100, "--separation", 5.0,
               "--noise", 0.1, "--image-size", 32, "--attribute-scale", 1.0, "--seed", 7) == EXIT_OK
    data = root / "syn" / "data"
    assert run("train-encoder", "--manifest", data, "--out", root / "enc", "--regime", "triplet",
               "--epochs", 10, "--seed", 7) == EXIT_OK
    return root, data, root / "enc" / "checkpoints" / "encoder.ckpt"


def test_layout_and_snapshot(work):
    root, data, _ = work
    for d in ("checkpoints", "reports", "images", "logs"):
        assert (root / "enc" / d).is_dir()
    cfg = json.loads((root / "enc" / "logs" / "run_config.json").read_text())
    assert cfg["command"] == "train-encoder" and cfg["seed"] == 7 and cfg["regime"] == "triplet"
    hashes = json.loads((root / "enc" / "logs" / "input_hashes.json").read_text())
    assert str(data) in hashes
    assert (root / "enc" / "logs" / "history.csv").read_text().startswith("epoch,loss,mined_fraction,val_metric")


def test_triplet_history_is_byte_identical(work, tmp_path):
    root, data, _ = work
    assert run("train-encoder", "--manifest", data, "--out", tmp_path / "again", "--regime", "triplet",
               "--epochs", 10, "--seed", 7) == EXIT_OK
    assert (tmp_path / "again" / "logs" / "history.csv").read_bytes() == \
        (root / "enc" / "logs" / "history.csv").read_bytes()


def test_export_then_evaluate(work, tmp_path, capsys):
    root, data, enc = work
    for split in ("train", "test"):
        assert run("export-embeddings", "--manifest", data, "--encoder", enc, "--split", split,
                   "--out", tmp_path / "emb") == EXIT_OK
    emb = tmp_path / "emb" / "reports"
    capsys.readouterr()
    assert run("evaluate", "--metrics", "kmeans,svm,knn,topk,mrr,map", "--embeddings", emb / "embeddings_test.csv",
               "--train-embeddings", emb / "embeddings_train.csv", "--out", tmp_path / "ev") == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["kmeans"] >= 0.95
    report = json.loads((tmp_path / "ev" / "reports" / "kmeans.json").read_text())
    assert report["metric"] == "kmeans" and report["value"] >= 0.95
    assert report["dataset_hash"]
    for name in ("svm", "knn", "mrr", "map"):
        assert 0 <= summary[name] <= 1
    assert set(summary["topk"]) == {"1", "5", "10"}


def test_evaluate_generation_metrics(tmp_path, capsys):
    rng = np.random.default_rng(0)
    np.save(tmp_path / "probs.npy", rng.dirichlet(np.ones(4), size=50))
    np.save(tmp_path / "real.npy", rng.standard_normal((120, 6)))
    np.save(tmp_path / "fake.npy", rng.standard_normal((120, 6)) + 1)
    capsys.readouterr()
    assert run("evaluate", "--metrics", "is,fid,kid", "--probs", tmp_path / "probs.npy",
               "--real-features", tmp_path / "real.npy", "--fake-features", tmp_path / "fake.npy",
               "--kid-subset", 50, "--kid-subsets", 5, "--out", tmp_path / "ev") == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["is"] >= 1 and summary["fid"] > 0 and summary["kid"] > 0
    assert "std" in json.loads((tmp_path / "ev" / "reports" / "kid.json").read_text())


def test_config_and_data_errors(tmp_path):
    assert run("evaluate", "--metrics", "bogus", "--out", tmp_path / "a") == EXIT_CONFIG
    assert run("evaluate", "--metrics", "kmeans", "--out", tmp_path / "b") == EXIT_CONFIG
    assert run("evaluate", "--metrics", "kmeans", "--embeddings", tmp_path / "none.csv",
               "--out", tmp_path / "c") == EXIT_DATA
    assert run("train-encoder", "--manifest", tmp_path / "missing", "--out", tmp_path / "d",
               "--regime", "triplet") == EXIT_DATA
    assert run("train-encoder", "--regime", "triplet", "--out", tmp_path / "e", "--manifest", tmp_path,
               "--no-such-flag") == EXIT_CONFIG
    assert run("frobnicate", "--out", tmp_path / "f") == EXIT_CONFIG


def test_console_script_rejects_unknown_flag(tmp_path):
    exe = shutil.which("eegvis")
    cmd = [exe] if exe else [sys.executable, "-m", "eegvis.cli"]
    proc = subprocess.run(cmd + ["export-embeddings", "--manifest", str(tmp_path), "--encoder", "e.ckpt",
                                 "--bogus", "--out", str(tmp_path)], capture_output=True,
                          text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "--bogus" in proc.stderr


def test_one_hot_gan_without_labels_is_a_data_error(tmp_path):
    rng = np.random.default_rng(0)
    recs = [EEGRecord(rng.standard_normal((14, 32)).astype(np.float32), 0, image_id=f"i{i}") for i in range(6)]
    images = {f"i{i}": rng.integers(0, 255, (32, 32, 3), dtype=np.uint8) for i in range(6)}
    write_container(tmp_path / "c", {"train": recs}, name="unlabelled", num_classes=1, images=images)
    assert run("train-gan", "--manifest", tmp_path / "c", "--out", tmp_path / "g", "--condition", "one-hot",
               "--steps", 2) == EXIT_DATA
    assert run("train-gan", "--manifest", tmp_path / "c", "--out", tmp_path / "h", "--condition", "eeg",
               "--steps", 2) == EXIT_CONFIG


def test_finetune_and_zero_shot(work, tmp_path):
    root, data, enc = work
    assert run("finetune", "--manifest", data, "--encoder", enc, "--out", tmp_path / "ft", "--epochs", 2) == EXIT_OK
    assert (tmp_path / "ft" / "logs" / "history.csv").read_text().startswith("epoch,loss,train_acc,val_acc")
    # the full-data encoder has seen every class
    assert run("zero-shot", "--manifest", data, "--encoder", enc, "--holdout", "1,2",
               "--out", tmp_path / "zs0") == EXIT_DATA
    assert run("train-encoder", "--manifest", data, "--out", tmp_path / "seen", "--regime", "triplet",
               "--epochs", 2, "--exclude-classes", "1,2") == EXIT_DATA  # one class left: nothing to contrast
    assert run("train-encoder", "--manifest", data, "--out", tmp_path / "seen", "--regime", "triplet",
               "--epochs", 3, "--exclude-classes", "2") == EXIT_OK
    assert run("zero-shot", "--manifest", data, "--encoder", tmp_path / "seen" / "checkpoints" / "encoder.ckpt",
               "--holdout", "0,2", "--out", tmp_path / "zs1") == EXIT_DATA
    # audit passes when every held-out class is new; the protocol needs two of them
    assert run("zero-shot", "--manifest", data, "--encoder", tmp_path / "seen" / "checkpoints" / "encoder.ckpt",
               "--holdout", "2", "--out", tmp_path / "zs2") == EXIT_CONFIG


def test_clip_gan_synthesize_translate(work, tmp_path):
    root, data, enc = work
    assert run("train-clip", "--manifest", data, "--out", tmp_path / "clip", "--epochs", 2, "--encoder", enc) == EXIT_OK
    for rel in ("checkpoints/clip.ckpt", "checkpoints/index/sha256", "reports/retrieval.json", "reports/ranked.csv"):
        assert (tmp_path / "clip" / rel).exists()
    assert run("train-gan", "--manifest", data, "--encoder", enc, "--out", tmp_path / "gan", "--steps", 4,
               "--eval-every", 2) == EXIT_OK
    gen = tmp_path / "gan" / "checkpoints" / "generator.ckpt"
    assert (tmp_path / "gan" / "images" / "samples.png").is_file()
    assert (tmp_path / "gan" / "logs" / "history.csv").read_text().startswith("step,g_loss,d_loss,ada_p,fid_eval")
    assert run("synthesize", "--manifest", data, "--generator", gen, "--out", tmp_path / "syn", "--count", 4,
               "--cols", 2) == EXIT_CONFIG
    assert run("synthesize", "--manifest", data, "--generator", gen, "--encoder", enc, "--out", tmp_path / "syn",
               "--count", 4, "--cols", 2) == EXIT_OK
    sidecar = (tmp_path / "syn" / "images" / "synthesized.csv").read_text().splitlines()
    assert sidecar[0] == "row,col,class,eeg_record_id,seed" and len(sidecar) == 5
    assert run("translate-image", "--manifest", data, "--encoder", enc, "--generator", gen, "--count", 4,
               "--out", tmp_path / "tr") == EXIT_OK
    report = json.loads((tmp_path / "tr" / "reports" / "translation.json").read_text())
    assert report["value"] >= 0
    assert (tmp_path / "tr" / "images" / "reconstructed.png").is_file()
    assert run("train-gan", "--manifest", data, "--condition", "one-hot", "--out", tmp_path / "oh",
               "--steps", 2, "--no-ada") == EXIT_OK
