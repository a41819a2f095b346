"""EEG-image joint embedding with a frozen image extractor (symmetric contrastive loss)
and a cosine retrieval index."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from eegvis.data import DatasetManifest, load_images, load_split
from eegvis.encoders import Encoder, parameter_hash
from eegvis.errors import ConfigError, DataError
from eegvis.evaluation import mean_average_precision, mrr, rank_by_similarity, topk_accuracy
from eegvis.runtime import make_optimizer

logger = logging.getLogger(__name__)

TAU_MIN, TAU_MAX = 1e-3, 1.0


@dataclass
class ClipConfig:
    temperature: float = 0.07
    learn_temperature: bool = True
    projection_dim: int = 128
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adaptive_moments"
    seed: int = 0

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.batch_size < 2:
            raise ConfigError("contrastive batches need at least two pairs")
        if self.epochs <= 0 or self.projection_dim <= 0:
            raise ConfigError("epochs and projection_dim must be positive")


def clip_loss(eeg_embeds: torch.Tensor, img_embeds: torch.Tensor, tau) -> torch.Tensor:
    """Symmetric cross-entropy over the B x B cosine-similarity matrix; pairs on the diagonal."""
    if eeg_embeds.shape != img_embeds.shape:
        raise ValueError("EEG and image batches must have the same shape")
    if len(eeg_embeds) < 2:
        raise ValueError("need at least two pairs")
    logits = eeg_embeds @ img_embeds.T / tau
    target = torch.arange(len(logits))
    return (F.cross_entropy(logits, target) + F.cross_entropy(logits.T, target)) / 2


class EEGClip(nn.Module):
    """Trainable EEG encoder plus one linear projection per modality.

    The image extractor itself is not part of this module; its features are
    computed once and only ``image_proj`` sees them.
    """

    def __init__(self, eeg_encoder: Encoder, image_feature_dim: int, config: ClipConfig):
        super().__init__()
        self.eeg_encoder = eeg_encoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed + 7)
            self.eeg_proj = nn.Linear(eeg_encoder.config.embed_dim, config.projection_dim)
            self.image_proj = nn.Linear(image_feature_dim, config.projection_dim)
        self.log_tau = nn.Parameter(torch.tensor(math.log(config.temperature)),
                                    requires_grad=config.learn_temperature)

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(TAU_MIN, TAU_MAX)

    def embed_eeg(self, signals: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.eeg_proj(self.eeg_encoder(signals)), dim=1)

    def embed_image_features(self, feats: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.image_proj(feats), dim=1)


def _paired_split(manifest: DatasetManifest, split: str, extractor):
    data = load_split(manifest, split)
    if any(not k for k in data.image_ids):
        raise DataError(f"split {split!r} has records without paired images")
    feats = extractor.extract(torch.from_numpy(load_images(manifest, data.image_ids))).float()
    return data, feats


@torch.no_grad()
def batch_top1(model: EEGClip, signals: torch.Tensor, feats: torch.Tensor, batch_size: int) -> float:
    """Top-1 pair retrieval inside consecutive chunks of ``batch_size`` pairs
    (chance 1/batch_size). A trailing partial chunk is dropped when a full one exists."""
    model.eval()
    n = len(signals)
    size = min(batch_size, n)
    hits, total = 0, 0
    for i in range(0, n - size + 1, size):
        e = model.embed_eeg(signals[i:i + size])
        g = model.embed_image_features(feats[i:i + size])
        hits += int((torch.argmax(e @ g.T, dim=1) == torch.arange(size)).sum())
        total += size
    return hits / total if total else float("nan")


def train_clip(
    eeg_encoder: Encoder,
    image_extractor,
    manifest: DatasetManifest,
    config: ClipConfig = ClipConfig(),
) -> tuple[EEGClip, list[dict]]:
    """Train the EEG side (encoder, projections, temperature) against frozen image features.

    History rows: epoch, loss, val_top1, temperature. Raises if the image
    extractor's parameters change.
    """
    config.validate()
    frozen_before = parameter_hash(image_extractor)
    train, train_feats = _paired_split(manifest, "train", image_extractor)
    has_val = bool(manifest.splits.get("val"))
    if has_val:
        val, val_feats = _paired_split(manifest, "val", image_extractor)

    model = EEGClip(eeg_encoder, image_extractor.feature_dim, config)
    dtype = next(eeg_encoder.parameters()).dtype
    model.to(dtype)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = make_optimizer(params, config.optimizer, config.learning_rate)
    x_all = torch.from_numpy(train.signals).to(dtype)
    f_all = train_feats.to(dtype)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(x_all))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2:
                continue
            loss = clip_loss(model.embed_eeg(x_all[idx]), model.embed_image_features(f_all[idx]), model.tau)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "val_top1": None,
               "temperature": float(model.tau.item())}
        if has_val:
            row["val_top1"] = batch_top1(model, torch.from_numpy(val.signals).to(dtype), val_feats.to(dtype),
                                         config.batch_size)
        history.append(row)
        logger.info("clip epoch %d loss %.4f val_top1 %s tau %.4f", row["epoch"], row["loss"],
                    row["val_top1"], row["temperature"])
    if parameter_hash(image_extractor) != frozen_before:
        raise RuntimeError("image extractor parameters changed during training")
    model.eval()
    return model, history


CLIP_HISTORY_COLUMNS = ("epoch", "loss", "val_top1", "temperature")


@torch.no_grad()
def evaluate_clip(model: EEGClip, image_extractor, manifest: DatasetManifest, split: str = "test",
                  k_list=(1, 5, 10), batch_size: int = 32) -> dict:
    """Retrieval report, labelled by protocol.

    pair_*: each EEG query must retrieve its own image among all split images.
    class_*: any image of the query's class counts as relevant.
    batch_top1: pair retrieval within chunks of ``batch_size``.
    """
    data, feats = _paired_split(manifest, split, image_extractor)
    dtype = next(model.parameters()).dtype
    x = torch.from_numpy(data.signals).to(dtype)
    e = model.embed_eeg(x).double().numpy()
    g = model.embed_image_features(feats.to(dtype)).double().numpy()
    keys = list(data.image_ids)
    qids = [str(r) for r in data.record_ids]
    own = dict(zip(qids, keys))
    label_of_key = dict(zip(keys, data.labels.tolist()))
    label_of_q = dict(zip(qids, data.labels.tolist()))
    pair = rank_by_similarity(qids, e, keys, g, lambda q, c: own[q] == c)
    cls = rank_by_similarity(qids, e, keys, g, lambda q, c: label_of_q[q] == label_of_key[c])
    report = {f"pair_top{k}": v for k, v in topk_accuracy(pair, k_list).items()}
    report.update({f"class_top{k}": v for k, v in topk_accuracy(cls, k_list).items()})
    report.update({"pair_mrr": mrr(pair), "class_mrr": mrr(cls), "class_map": mean_average_precision(cls),
                   "batch_top1": batch_top1(model, x, feats.to(dtype), batch_size)})
    return report


# ---------------------------------------------------------------------------
# retrieval index


@dataclass
class RetrievalIndex:
    gallery: np.ndarray  # G x D, unit-norm rows
    keys: list[str]

    def __post_init__(self):
        self.gallery = np.asarray(self.gallery, dtype=np.float64)
        if self.gallery.ndim != 2 or len(self.gallery) != len(self.keys):
            raise ValueError("gallery must be G x D with one key per row")
        norms = np.linalg.norm(self.gallery, axis=1)
        if len(norms) and np.max(np.abs(norms - 1)) > 1e-5:
            raise ValueError("gallery rows must be unit-norm")


def build_index(embeddings, keys: Sequence[str]) -> RetrievalIndex:
    g = np.asarray(embeddings, dtype=np.float64)
    g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    return RetrievalIndex(g, list(keys))


def retrieve(index: RetrievalIndex, query, k: int) -> list[tuple[str, float]]:
    """Top-k (key, cosine similarity), descending; ties keep the index's key order."""
    if len(index.keys) == 0:
        raise DataError("empty retrieval index")
    if not 0 < k <= len(index.keys):
        raise ConfigError(f"k must be in [1, {len(index.keys)}]")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    q = q / max(np.linalg.norm(q), 1e-12)
    sims = index.gallery @ q
    order = np.argsort(-sims, kind="stable")[:k]
    return [(index.keys[i], float(sims[i])) for i in order]


def _index_digest(keys_bytes: bytes, blob: bytes) -> str:
    return hashlib.sha256(hashlib.sha256(keys_bytes).digest() + hashlib.sha256(blob).digest()).hexdigest()


def save_index(index: RetrievalIndex, directory: str | os.PathLike) -> str:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    keys_bytes = ("key\n" + "".join(f"{k}\n" for k in index.keys)).encode()
    blob = np.ascontiguousarray(index.gallery, dtype="<f4").tobytes()
    (d / "keys.csv").write_bytes(keys_bytes)
    (d / "gallery.f32").write_bytes(blob)
    meta = f"{index.gallery.shape[0]} {index.gallery.shape[1]}\n"
    (d / "shape").write_text(meta)
    digest = _index_digest(keys_bytes, blob)
    (d / "sha256").write_text(digest + "\n")
    return digest


def load_index(directory: str | os.PathLike) -> RetrievalIndex:
    d = Path(directory)
    keys_bytes = (d / "keys.csv").read_bytes()
    blob = (d / "gallery.f32").read_bytes()
    if _index_digest(keys_bytes, blob) != (d / "sha256").read_text().strip():
        raise DataError(f"retrieval index {d} failed its content hash check")
    g, dim = map(int, (d / "shape").read_text().split())
    keys = keys_bytes.decode().splitlines()[1:]
    gallery = np.frombuffer(blob, dtype="<f4").reshape(g, dim).astype(np.float64)
    # float32 storage: renormalize so the unit-norm invariant holds at float64 tolerance
    return build_index(gallery, keys)


def write_ranked_csv(path: str | os.PathLike, results: dict[str, list[tuple[str, float]]]) -> None:
    """rows: query_id, rank (1-based), image_id, similarity."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "rank", "image_id", "similarity"])
        for qid, ranked in results.items():
            for r, (key, sim) in enumerate(ranked, start=1):
                w.writerow([qid, r, key, repr(sim)])


def save_clip(path, model: EEGClip, config: ClipConfig) -> str:
    from dataclasses import asdict
    from eegvis.encoders import save_checkpoint

    cfg = {"clip": asdict(config), "encoder": asdict(model.eeg_encoder.config),
           "image_feature_dim": model.image_proj.in_features}
    return save_checkpoint(path, "clip", cfg, model.state_dict(), dict(model.eeg_encoder.metadata))


def load_clip(path) -> tuple[EEGClip, ClipConfig]:
    from eegvis.encoders import EncoderConfig, load_checkpoint

    kind, cfg, state, meta = load_checkpoint(path)
    if kind != "clip":
        raise DataError(f"{path} holds a {kind!r} checkpoint, not an EEGClip model")
    config = ClipConfig(**cfg["clip"])
    encoder = Encoder(EncoderConfig.from_dict(cfg["encoder"]))
    encoder.metadata = meta
    model = EEGClip(encoder, cfg["image_feature_dim"], config)
    model.load_state_dict(state)
    model.eval()
    return model, config
