import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from eegvis.clip import (
    ClipConfig, EEGClip, RetrievalIndex, build_index, clip_loss, evaluate_clip, load_clip, load_index, retrieve,
    save_clip, save_index, train_clip, write_ranked_csv,
)
from eegvis.data import SyntheticSpec, make_synthetic
from eegvis.encoders import EncoderConfig, TinyConvExtractor, build_encoder, parameter_hash
from eegvis.errors import ConfigError, DataError


def test_loss_two_orthonormal_pairs():
    e = torch.eye(2, dtype=torch.float64)
    assert clip_loss(e, e, 1.0).item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert math.log(1 + math.exp(-1)) == pytest.approx(0.3133, abs=1e-4)


def test_loss_constant_similarity_is_log_b():
    e = F.normalize(torch.ones(6, 4, dtype=torch.float64), dim=1)
    assert clip_loss(e, e, 0.07).item() == pytest.approx(math.log(6), abs=1e-12)


def test_loss_joint_permutation_invariant():
    a = F.normalize(torch.randn(10, 8), dim=1)
    b = F.normalize(torch.randn(10, 8), dim=1)
    perm = torch.randperm(10)
    assert abs(clip_loss(a, b, 0.1).item() - clip_loss(a[perm], b[perm], 0.1).item()) <= 1e-6


def test_loss_decreases_with_temperature_at_identity():
    e = torch.eye(4, dtype=torch.float64)
    vals = [clip_loss(e, e, t).item() for t in (1.0, 0.1, 0.01)]
    # at tau=0.01 the exact value (~3e-100) rounds to 0 in float64
    assert vals[0] > vals[1] > vals[2] >= 0
    assert vals[2] < 1e-12


def test_loss_rejects_single_pair():
    with pytest.raises(ValueError):
        clip_loss(torch.ones(1, 3), torch.ones(1, 3), 0.1)


def test_config_validation():
    with pytest.raises(ConfigError):
        ClipConfig(temperature=0).validate()
    with pytest.raises(ConfigError):
        ClipConfig(batch_size=1).validate()


def test_temperature_clamped():
    model = EEGClip(build_encoder(EncoderConfig(), seed=0), 16, ClipConfig(temperature=50.0))
    assert model.tau.item() == 1.0


# ---------------------------------------------------------------------------
# retrieval index


def _index():
    g = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.6, 0.8], [0.6, 0.8, 0.0]])
    return build_index(g, ["a", "b", "c", "d"])


def test_self_retrieval():
    idx = _index()
    top = retrieve(idx, idx.gallery[2], 1)
    assert top[0][0] == "c" and top[0][1] == pytest.approx(1.0)


def test_full_k_is_permutation():
    idx = _index()
    assert sorted(k for k, _ in retrieve(idx, [0.3, 0.2, 0.1], 4)) == ["a", "b", "c", "d"]
    with pytest.raises(ConfigError):
        retrieve(idx, [1, 0, 0], 5)


def test_orthogonal_query_keeps_key_order():
    idx = build_index(np.eye(4)[:3, :], ["x", "y", "z"])
    res = retrieve(idx, [0, 0, 0, 1.0], 3)
    assert [k for k, _ in res] == ["x", "y", "z"]
    assert all(s == 0.0 for _, s in res)


def test_index_invariants():
    with pytest.raises(ValueError):
        RetrievalIndex(np.ones((2, 2)), ["a", "b"])
    with pytest.raises(DataError):
        retrieve(RetrievalIndex(np.zeros((0, 3)), []), [1, 0, 0], 1)


def test_index_persistence_and_tamper(tmp_path):
    idx = build_index(np.random.default_rng(0).standard_normal((20, 6)), [f"img{i}" for i in range(20)])
    save_index(idx, tmp_path / "ix")
    back = load_index(tmp_path / "ix")
    assert back.keys == idx.keys
    np.testing.assert_allclose(back.gallery, idx.gallery, atol=1e-6)
    blob = bytearray((tmp_path / "ix" / "gallery.f32").read_bytes())
    blob[0] ^= 1
    (tmp_path / "ix" / "gallery.f32").write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_index(tmp_path / "ix")


def test_ranked_csv(tmp_path):
    idx = _index()
    write_ranked_csv(tmp_path / "r.csv", {"q1": retrieve(idx, [1, 0, 0], 2)})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "query_id,rank,image_id,similarity"
    assert lines[1].startswith("q1,1,a,")
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# training


@pytest.fixture(scope="module")
def trained(paired_manifest):
    ext = TinyConvExtractor(128, seed=0)
    before = parameter_hash(ext)
    model, hist = train_clip(build_encoder(EncoderConfig(kind="lstm"), seed=0), ext, paired_manifest,
                             ClipConfig(epochs=30, batch_size=32, seed=0))
    return ext, before, model, hist


def test_training_improves_retrieval_and_freezes_images(trained, paired_manifest):
    ext, before, model, hist = trained
    assert parameter_hash(ext) == before
    assert hist[-1]["loss"] < hist[0]["loss"]
    assert hist[-1]["val_top1"] >= 0.8
    assert all(1e-3 <= r["temperature"] <= 1 for r in hist)
    report = evaluate_clip(model, ext, paired_manifest, "test")
    assert report["pair_top1"] > 10 / len(paired_manifest.splits["test"])
    assert report["class_top1"] >= report["pair_top1"]
    for key in ("pair_mrr", "class_mrr", "class_map", "batch_top1"):
        assert 0 <= report[key] <= 1


def test_clip_checkpoint_round_trip(tmp_path, trained, paired_manifest):
    ext, _, model, _ = trained
    save_clip(tmp_path / "clip.ckpt", model, ClipConfig(epochs=30))
    back, cfg = load_clip(tmp_path / "clip.ckpt")
    x = torch.randn(3, 14, 32)
    torch.testing.assert_close(back.embed_eeg(x), model.embed_eeg(x), rtol=0, atol=0)
    assert cfg.epochs == 30


def test_zero_learning_rate_keeps_everything(paired_manifest):
    enc = build_encoder(EncoderConfig(kind="cnn"), seed=1)
    ext = TinyConvExtractor(128, seed=0)
    model0 = EEGClip(enc, 128, ClipConfig(seed=0))
    before = {k: v.clone() for k, v in model0.state_dict().items()}
    model, hist = train_clip(enc, ext, paired_manifest, ClipConfig(epochs=2, learning_rate=0.0, seed=0))
    for k, v in model.state_dict().items():
        assert torch.equal(v, before[k])
    assert hist[0]["val_top1"] == hist[1]["val_top1"]
    assert hist[0]["temperature"] == hist[1]["temperature"]


def test_missing_images_rejected(small_manifest):
    with pytest.raises(DataError):
        train_clip(build_encoder(EncoderConfig(), seed=0), TinyConvExtractor(16), small_manifest,
                   ClipConfig(epochs=1))


def test_training_pairs_retrievable_after_convergence(tmp_path):
    m = make_synthetic(SyntheticSpec(num_classes=5, records_per_class=20, class_separation=2.0, noise_scale=0.1,
                                     attribute_scale=2.0, image_size=32, seed=3), tmp_path / "d")
    ext = TinyConvExtractor(128, seed=0)
    model, _ = train_clip(build_encoder(EncoderConfig(kind="lstm"), seed=0), ext, m,
                          ClipConfig(epochs=100, batch_size=32, seed=0))
    # every training image is in the gallery; each EEG query must find its own
    assert evaluate_clip(model, ext, m, "train")["pair_mrr"] >= 0.9
