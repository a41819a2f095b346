import itertools

import numpy as np
import pytest
import torch

from eegvis.data import SyntheticSpec, make_synthetic
from eegvis.encoders import EncoderConfig, build_encoder, build_head
from eegvis.errors import ConfigError, DataError
from eegvis.metric import (
    NoTripletsError, TrainConfig, TripletConfig, mine_all_valid, mine_semihard, train_supervised, train_triplet,
    triplet_loss,
)


def _brute_semihard(e, labels, margin):
    out = []
    B = len(labels)
    for a, p, n in itertools.product(range(B), repeat=3):
        if a == p or labels[a] != labels[p] or labels[n] == labels[a]:
            continue
        d_ap = float(np.sum((e[a] - e[p]) ** 2))
        d_an = float(np.sum((e[a] - e[n]) ** 2))
        if d_ap < d_an < d_ap + margin:
            out.append((a, p, n))
    return out


def test_mining_worked_example():
    e = torch.tensor([[0.0], [0.1], [0.3], [2.0]], dtype=torch.float64)
    t = [tuple(r) for r in mine_semihard(e, [0, 0, 1, 1], 0.5).tolist()]
    assert (0, 1, 2) in t
    assert (0, 1, 3) not in t
    assert t == sorted(t)


def test_collapsed_embeddings_mine_nothing():
    e = torch.ones(6, 4)
    assert mine_semihard(e, [0, 0, 1, 1, 2, 2], 0.2).shape == (0, 3)
    assert len(mine_all_valid(e, [0, 0, 1, 1, 2, 2])) == 6 * 4


def test_vanishing_margin_mines_nothing():
    e = torch.randn(12, 5, dtype=torch.float64)
    assert len(mine_semihard(e, np.arange(12) % 3, 1e-12)) == 0


def test_mining_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(200):
        B = int(rng.integers(3, 20))
        D = int(rng.integers(1, 6))
        e = rng.standard_normal((B, D))
        labels = rng.integers(0, int(rng.integers(1, 5)), size=B)
        margin = float(rng.uniform(0.01, 3.0))
        got = [tuple(r) for r in mine_semihard(torch.from_numpy(e), labels, margin).tolist()]
        assert got == _brute_semihard(e, labels, margin)


def test_mining_matches_brute_force_at_batch_64():
    rng = np.random.default_rng(5)
    e = rng.standard_normal((64, 3))
    labels = rng.integers(0, 4, size=64)
    got = [tuple(r) for r in mine_semihard(torch.from_numpy(e), labels, 0.5).tolist()]
    assert got == _brute_semihard(e, labels, 0.5)


def test_loss_examples():
    e = torch.tensor([[0.0], [0.0], [1.0]], dtype=torch.float64)
    assert triplet_loss(torch.zeros(3, 1), [(0, 1, 2)], 0.5).item() == pytest.approx(0.5)
    assert triplet_loss(e, [(0, 1, 2)], 0.5).item() == 0.0
    with pytest.raises(NoTripletsError):
        triplet_loss(e, np.zeros((0, 3), int), 0.5)


def test_loss_matches_double_loop(rng):
    e = rng.standard_normal((16, 8))
    labels = rng.integers(0, 3, size=16)
    triples = mine_all_valid(torch.from_numpy(e), labels)
    expect = 0.0
    for a, p, n in triples:
        s = 0.0
        for j in range(8):
            s += (e[a, j] - e[p, j]) ** 2 - (e[a, j] - e[n, j]) ** 2
        expect += max(0.0, s + 0.2)
    expect /= len(triples)
    assert triplet_loss(torch.from_numpy(e), triples, 0.2).item() == pytest.approx(expect, abs=1e-6)


def test_loss_gradient_matches_finite_differences(rng):
    for trial in range(5):
        e = torch.tensor(rng.standard_normal((10, 4)), dtype=torch.float64, requires_grad=True)
        labels = np.arange(10) % 3
        triples = mine_all_valid(e, labels)
        triplet_loss(e, triples, 1.0).backward()
        h = 1e-6
        num = torch.zeros_like(e)
        with torch.no_grad():
            for i in range(10):
                for j in range(4):
                    x = e.detach().clone()
                    x[i, j] += h
                    up = triplet_loss(x, triples, 1.0).item()
                    x[i, j] -= 2 * h
                    num[i, j] = (up - triplet_loss(x, triples, 1.0).item()) / (2 * h)
        rel = (num - e.grad).norm() / max(num.norm().item(), 1e-12)
        assert rel <= 1e-4


def test_hinge_floor(rng):
    for _ in range(50):
        e = torch.from_numpy(rng.standard_normal((9, 3)))
        assert triplet_loss(e, mine_all_valid(e, np.arange(9) % 3), 0.3).item() >= 0
    far = torch.tensor([[0.0], [0.0], [10.0], [10.0]])
    assert triplet_loss(far, mine_all_valid(far, [0, 0, 1, 1]), 0.3).item() == 0.0


def test_configs_validate():
    with pytest.raises(ConfigError):
        TripletConfig(margin=0).validate()
    with pytest.raises(ConfigError):
        TripletConfig(mining="hardest").validate()
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="lbfgs").validate()


def test_triplet_training_lowers_loss_and_is_reproducible(small_manifest):
    runs = []
    for _ in range(2):
        enc = build_encoder(EncoderConfig(kind="lstm"), seed=0)
        _, hist = train_triplet(enc, small_manifest, TripletConfig(), TrainConfig(epochs=30, seed=0))
        runs.append(hist)
    hist = runs[0]
    assert hist[-1]["loss"] < hist[0]["loss"]
    assert all(0 <= r["mined_fraction"] <= 1 for r in hist)
    assert runs[0] == runs[1]
    assert hist[-1]["val_metric"] >= 0.95


def test_triplet_training_writes_checkpoints(tmp_path, small_manifest):
    enc = build_encoder(EncoderConfig(kind="cnn"), seed=0)
    train_triplet(enc, small_manifest, TripletConfig(), TrainConfig(epochs=2, checkpoint_every=1), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch0001.ckpt", "epoch0002.ckpt"]
    assert enc.metadata["train_classes"] == [0, 1, 2]
    assert enc.metadata["regimes"] == ["triplet"]


def test_singleton_class_rejected(tmp_path):
    from eegvis.data import EEGRecord, write_container
    rng = np.random.default_rng(0)
    recs = [EEGRecord(rng.standard_normal((14, 32)).astype(np.float32), lab) for lab in (0, 0, 0, 1)]
    m = write_container(tmp_path / "c", {"train": recs}, name="single", num_classes=2)
    with pytest.raises(DataError):
        train_triplet(build_encoder(EncoderConfig(), seed=0), m)


def test_supervised_reaches_high_val_accuracy(small_manifest):
    enc = build_encoder(EncoderConfig(kind="lstm", normalize_output=False), seed=0)
    head = build_head(128, 3, seed=0)
    _, _, hist = train_supervised(enc, head, small_manifest, TrainConfig(epochs=30))
    assert max(r["val_acc"] for r in hist) >= 0.95


def test_zero_learning_rate_changes_nothing(small_manifest):
    enc = build_encoder(EncoderConfig(kind="cnn", normalize_output=False), seed=0)
    head = build_head(128, 3, seed=0)
    before = {k: v.clone() for k, v in enc.state_dict().items()}
    _, _, hist = train_supervised(enc, head, small_manifest, TrainConfig(epochs=3, learning_rate=0.0))
    for k, v in enc.state_dict().items():
        assert torch.equal(v, before[k])
    assert len({r["train_acc"] for r in hist}) == 1
    assert len({r["val_acc"] for r in hist}) == 1


def test_head_shape_mismatch(small_manifest):
    enc = build_encoder(EncoderConfig(), seed=0)
    with pytest.raises(ConfigError):
        train_supervised(enc, build_head(128, 5), small_manifest, TrainConfig(epochs=1))


@pytest.mark.slow
def test_shuffled_labels_memorize_without_generalizing(tmp_path):
    spec = SyntheticSpec(num_classes=3, records_per_class=300, class_separation=0.5, noise_scale=1.0, seed=21)
    m = make_synthetic(spec, tmp_path / "d")
    enc = build_encoder(EncoderConfig(kind="cnn", normalize_output=False), seed=0)
    head = build_head(128, 3, seed=0)
    _, _, hist = train_supervised(enc, head, m, TrainConfig(epochs=40, learning_rate=3e-3), shuffle_labels=True)
    assert hist[-1]["train_acc"] >= 0.9
    assert abs(hist[-1]["val_acc"] - 1 / 3) <= 0.15
