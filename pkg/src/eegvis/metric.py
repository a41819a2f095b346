"""Triplet loss with semi-hard mining, supervised cross-entropy and the shared training loops."""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from eegvis.data import DatasetManifest, batch_iter, container_hash, load_split
from eegvis.encoders import Encoder, encode, save_encoder
from eegvis.errors import ConfigError, DataError
from eegvis.evaluation import kmeans_accuracy
from eegvis.runtime import make_optimizer

logger = logging.getLogger(__name__)


@dataclass
class TripletConfig:
    margin: float = 0.2
    mining: str = "semi_hard"  # or "all_valid"

    def validate(self) -> None:
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")
        if self.mining not in ("semi_hard", "all_valid"):
            raise ConfigError(f"unknown mining strategy {self.mining!r}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 48
    learning_rate: float = 1e-3
    optimizer: str = "adaptive_moments"
    seed: int = 0
    checkpoint_every: int = 0
    weight_decay: float = 0.0

    def validate(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in ("adaptive_moments", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class NoTripletsError(ValueError):
    """Raised by triplet_loss for an empty triple set; the caller skips the step."""


def pairwise_sq_dists(x: torch.Tensor) -> torch.Tensor:
    diff = x[:, None, :] - x[None, :, :]
    return (diff * diff).sum(-1)


def mine_semihard(embeddings, labels, margin: float) -> np.ndarray:
    """All (a, p, n) with label[a]==label[p], a != p, label[n] != label[a] and
    d(a,p) < d(a,n) < d(a,p) + margin, d squared Euclidean.

    Returns an int64 array of shape T x 3 in lexicographic order.
    """
    return _mine(embeddings, labels, margin, semi_hard=True)


def mine_all_valid(embeddings, labels) -> np.ndarray:
    return _mine(embeddings, labels, 0.0, semi_hard=False)


def _mine(embeddings, labels, margin, semi_hard):
    e = torch.as_tensor(embeddings).detach()
    if e.dim() == 1:
        e = e[:, None]
    lab = torch.as_tensor(np.asarray(labels))
    d = pairwise_sq_dists(e.to(torch.float64))
    same = lab[:, None] == lab[None, :]
    pos = same & ~torch.eye(len(lab), dtype=torch.bool)
    valid = pos[:, :, None] & ~same[:, None, :]
    if semi_hard:
        d_ap = d[:, :, None]
        d_an = d[:, None, :]
        valid &= (d_ap < d_an) & (d_an < d_ap + margin)
    return torch.nonzero(valid).numpy().astype(np.int64)


def triplet_loss(embeddings: torch.Tensor, triples, margin: float) -> torch.Tensor:
    """Mean over triples of max(0, d(a,p) - d(a,n) + margin), squared Euclidean d."""
    t = torch.as_tensor(np.asarray(triples), dtype=torch.long).reshape(-1, 3)
    if len(t) == 0:
        raise NoTripletsError("no triplets to score")
    a, p, n = embeddings[t[:, 0]], embeddings[t[:, 1]], embeddings[t[:, 2]]
    d_ap = ((a - p) ** 2).sum(-1)
    d_an = ((a - n) ** 2).sum(-1)
    return F.relu(d_ap - d_an + margin).mean()


def _save(checkpoint_dir, epoch, encoder, head=None):
    if checkpoint_dir is None:
        return
    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    save_encoder(Path(checkpoint_dir) / f"epoch{epoch:04d}.ckpt", encoder, head)


def _record_provenance(encoder: Encoder, prior: dict, manifest: DatasetManifest, labels: np.ndarray, regime: str):
    """Set metadata to ``prior`` (the pre-run metadata) extended by this run; idempotent."""
    seen = sorted(set(int(c) for c in labels) | set(prior.get("train_classes", [])))
    encoder.metadata.update({"train_classes": seen,
                             "dataset_hashes": list(prior.get("dataset_hashes", [])) + [container_hash(manifest)],
                             "regimes": list(prior.get("regimes", [])) + [regime]})


def train_triplet(
    encoder: Encoder,
    manifest: DatasetManifest,
    triplet_config: TripletConfig = TripletConfig(),
    train_config: TrainConfig = TrainConfig(),
    checkpoint_dir: Optional[str | os.PathLike] = None,
) -> tuple[Encoder, list[dict]]:
    """Metric learning with within-batch mining over class-balanced batches.

    Gradients come from the mined triples only; the logged ``loss`` is the margin
    objective over every valid in-batch triple (evaluated before each step) so it
    stays defined when mining comes back empty.

    History rows: epoch, loss, mined_fraction,
    val_metric (k-means accuracy on the val split, when present).
    """
    triplet_config.validate()
    train_config.validate()
    train = load_split(manifest, "train")
    counts = np.bincount(train.labels)
    if np.any((counts > 0) & (counts < 2)):
        raise DataError(f"classes {np.flatnonzero((counts > 0) & (counts < 2)).tolist()} have < 2 train records")
    if np.count_nonzero(counts) < 2:
        raise DataError("triplet training needs at least two classes in the train split")
    val = load_split(manifest, "val") if manifest.splits.get("val") else None
    prior = copy.deepcopy(encoder.metadata)
    dtype = next(encoder.parameters()).dtype
    opt = make_optimizer(encoder.parameters(), train_config.optimizer, train_config.learning_rate,
                         train_config.weight_decay)
    history = []
    for epoch in range(train_config.epochs):
        encoder.train()
        losses, mined, n_batches = [], 0, 0
        for x, y in batch_iter(train, "train", train_config.batch_size,
                               shuffle_seed=train_config.seed * 100003 + epoch, balanced_classes=True):
            n_batches += 1
            emb = encoder(x.to(dtype))
            with torch.no_grad():
                everything = mine_all_valid(emb, y)
                if len(everything):
                    losses.append(triplet_loss(emb, everything, triplet_config.margin).item())
            if triplet_config.mining == "semi_hard":
                triples = mine_semihard(emb, y, triplet_config.margin)
            else:
                triples = mine_all_valid(emb, y)
            if len(triples) == 0:
                continue
            mined += 1
            loss = triplet_loss(emb, triples, triplet_config.margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
        row = {
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "mined_fraction": mined / max(n_batches, 1),
            "val_metric": None,
        }
        if val is not None and len(np.unique(val.labels)) >= 2:
            emb = encode(encoder, val.signals).numpy()
            row["val_metric"] = kmeans_accuracy(emb, val.labels, seed=train_config.seed)
        history.append(row)
        logger.info("triplet epoch %d loss %.4f mined %.2f val %s", row["epoch"], row["loss"],
                    row["mined_fraction"], row["val_metric"])
        if train_config.checkpoint_every and (epoch + 1) % train_config.checkpoint_every == 0:
            _record_provenance(encoder, prior, manifest, train.labels, "triplet")
            _save(checkpoint_dir, epoch + 1, encoder)
    _record_provenance(encoder, prior, manifest, train.labels, "triplet")
    encoder.eval()
    return encoder, history


@torch.no_grad()
def _accuracy(encoder, head, data, dtype) -> float:
    encoder.eval()
    logits = head(encode(encoder, data.signals).to(dtype))
    return float((logits.argmax(1).numpy() == data.labels).mean())


def train_supervised(
    encoder: Encoder,
    head: nn.Linear,
    manifest: DatasetManifest,
    train_config: TrainConfig = TrainConfig(),
    checkpoint_dir: Optional[str | os.PathLike] = None,
    shuffle_labels: bool = False,
) -> tuple[Encoder, nn.Linear, list[dict]]:
    """Cross-entropy training of encoder + linear head.

    History rows: epoch, loss, train_acc, val_acc. ``shuffle_labels`` permutes the
    training labels once (a memorization control).
    """
    train_config.validate()
    if head.out_features != manifest.num_classes or head.in_features != encoder.config.embed_dim:
        raise ConfigError("head shape does not match encoder embed_dim / dataset num_classes")
    train = load_split(manifest, "train")
    if len(train) == 0:
        raise DataError("empty train split")
    if shuffle_labels:
        rng = np.random.default_rng(train_config.seed)
        train.labels = rng.permutation(train.labels)
    val = load_split(manifest, "val") if manifest.splits.get("val") else None
    prior = copy.deepcopy(encoder.metadata)
    dtype = next(encoder.parameters()).dtype
    head.to(dtype)
    params = list(encoder.parameters()) + list(head.parameters())
    opt = make_optimizer(params, train_config.optimizer, train_config.learning_rate, train_config.weight_decay)
    history = []
    for epoch in range(train_config.epochs):
        encoder.train()
        losses = []
        for x, y in batch_iter(train, "train", train_config.batch_size,
                               shuffle_seed=train_config.seed * 100003 + epoch):
            loss = F.cross_entropy(head(encoder(x.to(dtype))), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "train_acc": _accuracy(encoder, head, train, dtype),
            "val_acc": _accuracy(encoder, head, val, dtype) if val is not None and len(val) else None,
        }
        history.append(row)
        logger.info("supervised epoch %d loss %.4f train %.3f val %s", row["epoch"], row["loss"],
                    row["train_acc"], row["val_acc"])
        if train_config.checkpoint_every and (epoch + 1) % train_config.checkpoint_every == 0:
            _record_provenance(encoder, prior, manifest, train.labels, "supervised")
            _save(checkpoint_dir, epoch + 1, encoder, head)
    _record_provenance(encoder, prior, manifest, train.labels, "supervised")
    encoder.eval()
    return encoder, head, history


TRIPLET_HISTORY_COLUMNS = ("epoch", "loss", "mined_fraction", "val_metric")
SUPERVISED_HISTORY_COLUMNS = ("epoch", "loss", "train_acc", "val_acc")
