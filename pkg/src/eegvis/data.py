"""On-disk EEG dataset container ("EEGPACK v1"), synthetic data and batching.

A container is a directory::

    manifest.json            geometry, splits (lists of global record ids), flags
    <split>.f32              records as little-endian float32, C x N row-major each
    <split>.labels.csv       record_index,label,subject,image_id (one row per record, blob order)
    images/<image_id>.png    optional paired stimulus images

Signals are channels-first (C x N) everywhere in this package.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image

from eegvis.errors import ConfigError, DataError, GeometryError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "EEGPACK v1"
SPLITS = ("train", "val", "test")


@dataclass
class EEGRecord:
    signal: np.ndarray  # C x N
    label: int
    subject: int = 0
    image_id: Optional[str] = None


@dataclass
class DatasetManifest:
    name: str
    channels: int
    timesteps: int
    num_classes: int
    splits: dict[str, list[int]]
    image_root: Optional[str] = None
    variant: Optional[str] = None
    normalize: bool = True
    class_names: Optional[list[str]] = None
    root: Optional[Path] = field(default=None, compare=False)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "channels": self.channels,
            "timesteps": self.timesteps,
            "num_classes": self.num_classes,
            "splits": {k: list(map(int, v)) for k, v in self.splits.items()},
            "image_root": self.image_root,
            "variant": self.variant,
            "normalize": self.normalize,
            "class_names": self.class_names,
        }

    @property
    def num_records(self) -> int:
        return sum(len(v) for v in self.splits.values())

    def image_dir(self) -> Optional[Path]:
        if self.image_root is None or self.root is None:
            return None
        return self.root / self.image_root


@dataclass
class SyntheticSpec:
    num_classes: int = 3
    channels: int = 14
    timesteps: int = 32
    records_per_class: int = 100
    class_separation: float = 5.0
    noise_scale: float = 0.1
    seed: int = 0
    # paired images (0 disables); attribute_scale couples EEG to per-image attributes
    image_size: int = 0
    attribute_scale: float = 0.0
    num_subjects: int = 1
    # per-record circular time shift drawn from [-latency_jitter, latency_jitter]
    latency_jitter: int = 0

    def validate(self) -> None:
        for name in ("num_classes", "channels", "timesteps", "records_per_class", "num_subjects"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.class_separation <= 0:
            raise ConfigError("class_separation must be > 0")
        if self.latency_jitter < 0 or self.latency_jitter >= self.timesteps:
            raise ConfigError("latency_jitter must be in [0, timesteps)")
        if self.noise_scale < 0 or self.attribute_scale < 0:
            raise ConfigError("noise_scale and attribute_scale must be >= 0")
        if self.image_size and (self.image_size < 8 or self.image_size & (self.image_size - 1)):
            raise ConfigError("image_size must be a power of two >= 8")
        if self.image_size and self.num_classes > len(SHAPES):
            raise ConfigError(f"at most {len(SHAPES)} classes can carry rendered images")


# ---------------------------------------------------------------------------
# container I/O


def write_container(
    root: str | os.PathLike,
    records: dict[str, Sequence[EEGRecord]],
    *,
    name: str,
    num_classes: int,
    channels: Optional[int] = None,
    timesteps: Optional[int] = None,
    images: Optional[dict[str, np.ndarray]] = None,
    variant: Optional[str] = None,
    normalize: bool = True,
    class_names: Optional[list[str]] = None,
    drop_bad: bool = True,
) -> DatasetManifest:
    """Write records into an EEGPACK container and return the loaded manifest.

    Records with non-finite samples are dropped (``drop_bad``) or rejected.
    ``images`` maps image_id to uint8 H x W x 3 arrays written as PNG.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create container at {root}: {exc}") from exc

    first = next((r for recs in records.values() for r in recs), None)
    if first is None:
        raise DataError("no records to write")
    C = channels or first.signal.shape[0]
    N = timesteps or first.signal.shape[1]

    splits: dict[str, list[int]] = {}
    next_id = 0
    for split, recs in records.items():
        kept = []
        for rec in recs:
            sig = np.asarray(rec.signal)
            if sig.shape != (C, N):
                raise GeometryError(f"record in {split!r} has shape {sig.shape}, expected {(C, N)}")
            if not np.all(np.isfinite(sig)):
                if drop_bad:
                    continue
                raise DataError(f"non-finite record in split {split!r}")
            if not 0 <= rec.label < num_classes:
                raise DataError(f"label {rec.label} outside [0, {num_classes})")
            kept.append(rec)
        if len(kept) < len(recs):
            logger.warning("dropped %d non-finite records from %s", len(recs) - len(kept), split)
        ids = list(range(next_id, next_id + len(kept)))
        next_id += len(kept)
        splits[split] = ids
        blob = np.stack([r.signal for r in kept]).astype("<f4") if kept else np.zeros((0, C, N), "<f4")
        with open(root / f"{split}.f32", "wb") as fh:
            fh.write(blob.tobytes(order="C"))
        with open(root / f"{split}.labels.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["record_index", "label", "subject", "image_id"])
            for rid, rec in zip(ids, kept):
                w.writerow([rid, int(rec.label), int(rec.subject), rec.image_id or ""])

    image_root = None
    if images:
        image_root = "images"
        (root / image_root).mkdir(exist_ok=True)
        for key in sorted(images):
            Image.fromarray(np.asarray(images[key], dtype=np.uint8)).save(root / image_root / f"{key}.png")

    manifest = DatasetManifest(
        name=name, channels=C, timesteps=N, num_classes=num_classes, splits=splits,
        image_root=image_root, variant=variant, normalize=normalize, class_names=class_names,
    )
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return load_manifest(root)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load and eagerly validate a container (directory or its manifest.json)."""
    path = Path(path)
    root = path.parent if path.name == "manifest.json" else path
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"manifest not found: {mpath}")
    try:
        doc = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {mpath}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        manifest = DatasetManifest(
            name=doc["name"],
            channels=int(doc["channels"]),
            timesteps=int(doc["timesteps"]),
            num_classes=int(doc["num_classes"]),
            splits={k: [int(i) for i in v] for k, v in doc["splits"].items()},
            image_root=doc.get("image_root"),
            variant=doc.get("variant"),
            normalize=bool(doc.get("normalize", True)),
            class_names=doc.get("class_names"),
            root=root,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed manifest {mpath}: {exc}") from exc
    if min(manifest.channels, manifest.timesteps, manifest.num_classes) <= 0:
        raise DataError("channels, timesteps and num_classes must be positive")

    seen: set[int] = set()
    for split, ids in manifest.splits.items():
        overlap = seen.intersection(ids)
        if overlap or len(set(ids)) != len(ids):
            raise DataError(f"split {split!r} overlaps other splits (e.g. record {sorted(overlap or ids)[0]})")
        seen.update(ids)

    record_bytes = manifest.channels * manifest.timesteps * 4
    for split, ids in manifest.splits.items():
        blob = root / f"{split}.f32"
        if not blob.is_file():
            raise DataError(f"missing blob {blob}")
        size = blob.stat().st_size
        if size != len(ids) * record_bytes:
            raise GeometryError(
                f"{blob.name}: {size} bytes does not hold {len(ids)} records of "
                f"{manifest.channels}x{manifest.timesteps} float32"
            )
        meta = _read_labels(root / f"{split}.labels.csv")
        if [m[0] for m in meta] != ids:
            raise DataError(f"{split}.labels.csv record_index column disagrees with manifest")
        if any(not 0 <= m[1] < manifest.num_classes for m in meta):
            raise DataError(f"{split}: label outside [0, {manifest.num_classes})")
    return manifest


def _read_labels(path: Path) -> list[tuple[int, int, int, Optional[str]]]:
    if not path.is_file():
        raise DataError(f"missing label table {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["record_index", "label", "subject", "image_id"]:
            raise DataError(f"{path.name}: unexpected columns {reader.fieldnames}")
        for row in reader:
            rows.append((int(row["record_index"]), int(row["label"]), int(row["subject"]), row["image_id"] or None))
    return rows


@dataclass
class SplitData:
    """All records of one split held in memory."""

    signals: np.ndarray  # M x C x N float32
    labels: np.ndarray
    subjects: np.ndarray
    record_ids: np.ndarray
    image_ids: list[Optional[str]]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, mask_or_idx) -> "SplitData":
        idx = np.arange(len(self))[mask_or_idx]
        return SplitData(
            self.signals[idx], self.labels[idx], self.subjects[idx], self.record_ids[idx],
            [self.image_ids[i] for i in idx],
        )


def zscore(signals: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-record, per-channel standardization over time."""
    mu = signals.mean(axis=-1, keepdims=True)
    sd = signals.std(axis=-1, keepdims=True)
    return ((signals - mu) / (sd + eps)).astype(np.float32)


def load_split(manifest: DatasetManifest, split: str, normalize: Optional[bool] = None) -> SplitData:
    if manifest.root is None:
        raise DataError("manifest is not bound to a container directory")
    if split not in manifest.splits:
        raise DataError(f"unknown split {split!r}; have {sorted(manifest.splits)}")
    C, N = manifest.channels, manifest.timesteps
    raw = np.fromfile(manifest.root / f"{split}.f32", dtype="<f4")
    n = len(manifest.splits[split])
    if raw.size != n * C * N:
        raise GeometryError(f"{split}.f32 holds {raw.size} floats, expected {n * C * N}")
    signals = raw.reshape(n, C, N).astype(np.float32)
    if not np.all(np.isfinite(signals)):
        raise DataError(f"{split}.f32 contains non-finite samples")
    meta = _read_labels(manifest.root / f"{split}.labels.csv")
    if normalize if normalize is not None else manifest.normalize:
        signals = zscore(signals)
    return SplitData(
        signals=signals,
        labels=np.array([m[1] for m in meta], dtype=np.int64),
        subjects=np.array([m[2] for m in meta], dtype=np.int64),
        record_ids=np.array([m[0] for m in meta], dtype=np.int64),
        image_ids=[m[3] for m in meta],
    )


def load_records(manifest: DatasetManifest, split: str) -> list[EEGRecord]:
    data = load_split(manifest, split, normalize=False)
    return [
        EEGRecord(data.signals[i], int(data.labels[i]), int(data.subjects[i]), data.image_ids[i])
        for i in range(len(data))
    ]


def load_images(manifest: DatasetManifest, image_ids: Sequence[Optional[str]]) -> np.ndarray:
    """Paired images as float32 B x 3 x H x W scaled to [-1, 1]."""
    img_dir = manifest.image_dir()
    if img_dir is None or not img_dir.is_dir():
        raise DataError(f"dataset {manifest.name!r} has no images")
    out = []
    for key in image_ids:
        if not key:
            raise DataError("record without image_id")
        p = img_dir / f"{key}.png"
        if not p.is_file():
            raise DataError(f"missing image {p}")
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32)
        out.append(arr.transpose(2, 0, 1) / 127.5 - 1.0)
    return np.stack(out).astype(np.float32)


def container_hash(manifest: DatasetManifest) -> str:
    """sha256 over manifest.json and every blob/label table."""
    if manifest.root is None:
        raise DataError("manifest is not bound to a container directory")
    h = hashlib.sha256()
    files = ["manifest.json"]
    for split in sorted(manifest.splits):
        files += [f"{split}.f32", f"{split}.labels.csv"]
    for name in files:
        h.update(name.encode())
        with open(manifest.root / name, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def select_classes(manifest: DatasetManifest, classes: Sequence[int], dest: str | os.PathLike,
                   exclude: bool = False) -> DatasetManifest:
    """Copy the container keeping (or, with ``exclude``, dropping) the given classes.

    Labels keep their original ids so probes on the full dataset stay comparable.
    """
    keep = set(int(c) for c in classes)
    records = {}
    for split in manifest.splits:
        recs = load_records(manifest, split)
        records[split] = [r for r in recs if (r.label in keep) != exclude]
    images = None
    img_dir = manifest.image_dir()
    if img_dir is not None and img_dir.is_dir():
        wanted = {r.image_id for recs in records.values() for r in recs if r.image_id}
        images = {k: np.asarray(Image.open(img_dir / f"{k}.png").convert("RGB")) for k in sorted(wanted)}
    tag = "without" if exclude else "with"
    return write_container(
        dest, records, name=f"{manifest.name}-{tag}-{'-'.join(map(str, sorted(keep)))}",
        num_classes=manifest.num_classes, channels=manifest.channels, timesteps=manifest.timesteps,
        images=images, variant=manifest.variant, normalize=manifest.normalize,
        class_names=manifest.class_names,
    )


# ---------------------------------------------------------------------------
# synthetic data

SHAPES = ("disk", "square", "triangle", "plus", "hbar", "vbar", "ring", "diamond", "cross", "corner")


def _shape_mask(shape: str, size: int, cx: float, cy: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    r = size * 0.22
    dx, dy = xx - cx, yy - cy
    w = max(1.0, size / 16)
    if shape == "disk":
        return dx**2 + dy**2 <= r**2
    if shape == "square":
        return (np.abs(dx) <= r * 0.85) & (np.abs(dy) <= r * 0.85)
    if shape == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if shape == "plus":
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    if shape == "hbar":
        return (np.abs(dx) <= r * 1.2) & (np.abs(dy) <= w * 1.5)
    if shape == "vbar":
        return (np.abs(dy) <= r * 1.2) & (np.abs(dx) <= w * 1.5)
    if shape == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (r - 2 * w) ** 2)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if shape == "cross":
        return ((np.abs(dx - dy) <= w * 1.4) | (np.abs(dx + dy) <= w * 1.4)) & (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if shape == "corner":
        return ((np.abs(dx + r / 2) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy - r / 2) <= w) & (np.abs(dx) <= r))
    raise ValueError(shape)


def render_image(label: int, attributes: np.ndarray, size: int) -> np.ndarray:
    """Deterministic uint8 H x W x 3 image of the class shape.

    ``attributes`` in [-1, 1]^3 control horizontal offset, vertical offset and hue.
    """
    shift = size * 0.125
    cx = (size - 1) / 2 + attributes[0] * shift
    cy = (size - 1) / 2 + attributes[1] * shift
    mask = _shape_mask(SHAPES[label], size, cx, cy)
    t = (attributes[2] + 1) / 2
    color = np.array([0.9 * (1 - t) + 0.1 * t, 0.3 + 0.4 * t, 0.1 * (1 - t) + 0.9 * t])
    img = np.full((size, size, 3), 0.08, dtype=np.float32)
    img[mask] = color
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def make_synthetic(spec: SyntheticSpec, dest: str | os.PathLike) -> DatasetManifest:
    """Write a class-template-plus-noise container; deterministic for a fixed seed.

    Record of class k = class_separation * T_k + attribute_scale * sum_j a_j A_j + noise_scale * eps,
    with T_k, A_j standard-normal C x N templates drawn once. When ``image_size`` is set each
    record gets its own rendered image whose offsets/hue are the attributes a_j, so the EEG
    carries both class and image-specific information. ``latency_jitter`` circularly shifts
    the noiseless part of each record in time. Split is 80/10/10 stratified by class.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, N, K = spec.channels, spec.timesteps, spec.num_classes
    templates = rng.standard_normal((K, C, N)) * spec.class_separation
    attr_templates = rng.standard_normal((3, C, N))

    n_per = spec.records_per_class
    n_val = max(1, round(0.1 * n_per)) if n_per >= 3 else 0
    n_test = n_val
    n_train = n_per - n_val - n_test

    records: dict[str, list[EEGRecord]] = {s: [] for s in SPLITS}
    images: dict[str, np.ndarray] = {}
    counter = 0
    for k in range(K):
        attrs = rng.uniform(-1, 1, size=(n_per, 3))
        noise = rng.standard_normal((n_per, C, N))
        subjects = rng.integers(0, spec.num_subjects, size=n_per)
        shifts = (rng.integers(-spec.latency_jitter, spec.latency_jitter + 1, size=n_per)
                  if spec.latency_jitter else np.zeros(n_per, dtype=int))
        for i in range(n_per):
            sig = templates[k]
            if spec.attribute_scale:
                sig = sig + spec.attribute_scale * np.tensordot(attrs[i], attr_templates, axes=1)
            if shifts[i]:
                sig = np.roll(sig, shifts[i], axis=1)
            sig = sig + noise[i] * spec.noise_scale
            image_id = None
            if spec.image_size:
                image_id = f"img{counter:06d}"
                images[image_id] = render_image(k, attrs[i], spec.image_size)
            counter += 1
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            records[split].append(EEGRecord(sig.astype(np.float32), k, int(subjects[i]), image_id))

    names = list(SHAPES[:K]) if K <= len(SHAPES) else None
    return write_container(
        dest, records, name=f"synthetic-{K}c-{C}x{N}-s{spec.seed}", num_classes=K,
        channels=C, timesteps=N, images=images or None, variant="synthetic",
        normalize=True, class_names=names,
    )


# ---------------------------------------------------------------------------
# batching


def _balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    # units of 2 (or 3 for an odd remainder) same-class records keep every batch minable
    units = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if len(idx) < 2:
            raise DataError(f"class {c} has {len(idx)} record(s); balanced batching needs >= 2")
        n_units = len(idx) // 2
        chunks = np.array_split(idx, n_units)
        units.extend(chunks)
    order = rng.permutation(len(units))
    batches, current = [], []
    for u in order:
        unit = units[u]
        if current and sum(map(len, current)) + len(unit) > batch_size:
            batches.append(np.concatenate(current))
            current = []
        current.append(unit)
    if current:
        batches.append(np.concatenate(current))
    return batches


def batch_indices(labels: np.ndarray, batch_size: int, shuffle_seed: Optional[int],
                  balanced_classes: bool = False) -> list[np.ndarray]:
    n = len(labels)
    if n == 0:
        raise DataError("empty split")
    if batch_size <= 0:
        raise ConfigError("batch_size must be positive")
    rng = np.random.default_rng(shuffle_seed)
    if balanced_classes:
        if batch_size < 3:
            raise ConfigError("balanced batches need batch_size >= 3")
        return _balanced_batches(np.asarray(labels), batch_size, rng)
    order = rng.permutation(n) if shuffle_seed is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(
    manifest: DatasetManifest | SplitData,
    split: str,
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    balanced_classes: bool = False,
) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """One epoch of (signals B x C x N, labels B) batches.

    Every record appears exactly once. With ``balanced_classes`` each batch holds
    at least two records of every class present in it, and batches may be one
    short of ``batch_size`` so same-class pairs are never split.
    """
    data = manifest if isinstance(manifest, SplitData) else load_split(manifest, split)
    for idx in batch_indices(data.labels, batch_size, shuffle_seed, balanced_classes):
        yield torch.from_numpy(data.signals[idx]), torch.from_numpy(data.labels[idx])
