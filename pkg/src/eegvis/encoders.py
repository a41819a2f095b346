"""EEG feature encoders, classification head, image feature extractors and checkpoints."""

from __future__ import annotations

import hashlib
import json
import os
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Optional, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from eegvis.errors import ConfigError, DataError, GeometryError


@dataclass
class EncoderConfig:
    kind: str = "lstm"
    input_channels: int = 14
    input_timesteps: int = 32
    embed_dim: int = 128
    lstm_layers: int = 2
    lstm_hidden: int = 128
    cnn_channel_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    cnn_kernel: int = 3
    cnn_stride: int = 2
    cnn_padding: int = 0
    normalize_output: bool = True

    def validate(self) -> None:
        if self.kind not in ("lstm", "cnn"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.embed_dim <= 0 or self.input_channels <= 0 or self.input_timesteps <= 0:
            raise ConfigError("embed_dim, input_channels and input_timesteps must be positive")
        if self.kind == "lstm" and (self.lstm_layers <= 0 or self.lstm_hidden <= 0):
            raise ConfigError("lstm_layers and lstm_hidden must be positive")
        if self.kind == "cnn":
            if not self.cnn_channel_widths:
                raise ConfigError("cnn_channel_widths must be non-empty")
            lengths = cnn_lengths(self)
            if lengths[-1] < 1:
                raise ConfigError(
                    f"CNN downsampling collapses {self.input_timesteps} timesteps: lengths {lengths}"
                )

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def cnn_lengths(config: EncoderConfig) -> list[int]:
    """Temporal length after each conv block."""
    out, n = [], config.input_timesteps
    for _ in config.cnn_channel_widths:
        n = (n + 2 * config.cnn_padding - config.cnn_kernel) // config.cnn_stride + 1
        out.append(n)
        if n < 1:
            break
    return out


class LSTMEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.lstm = nn.LSTM(
            config.input_channels, config.lstm_hidden, num_layers=config.lstm_layers, batch_first=True
        )
        self.proj = nn.Linear(config.lstm_hidden, config.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # B x C x N -> sequence of N vectors of size C
        _, (h, _) = self.lstm(x.transpose(1, 2))
        return self.proj(h[-1])


class CNNEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        layers = []
        c_in = config.input_channels
        for width in config.cnn_channel_widths:
            layers += [
                nn.Conv1d(c_in, width, config.cnn_kernel, stride=config.cnn_stride, padding=config.cnn_padding),
                nn.ReLU(),
            ]
            c_in = width
        self.features = nn.Sequential(*layers)
        self.proj = nn.Linear(c_in, config.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(x).mean(dim=-1))


class Encoder(nn.Module):
    """EEG signal (B x C x N) -> feature vectors (B x embed_dim).

    ``metadata`` travels with checkpoints; training records the dataset hash and
    the classes seen there so unseen-class evaluation can audit for leakage.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.body = LSTMEncoder(config) if config.kind == "lstm" else CNNEncoder(config)
        self.metadata: dict = {}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.input_channels:
            raise GeometryError(
                f"expected B x {self.config.input_channels} x N signals, got {tuple(x.shape)}"
            )
        if self.config.kind == "cnn" and x.shape[2] != self.config.input_timesteps:
            raise GeometryError(f"expected {self.config.input_timesteps} timesteps, got {x.shape[2]}")
        z = self.body(x)
        if self.config.normalize_output:
            z = F.normalize(z, dim=1, eps=1e-12)
        return z


def build_encoder(config: EncoderConfig, seed: int = 0) -> Encoder:
    """Build an encoder; identical (config, seed) give identical parameters."""
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Encoder(config)


def build_head(embed_dim: int, num_classes: int, seed: int = 0) -> nn.Linear:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        return nn.Linear(embed_dim, num_classes)


def _as_tensor(signals, module: nn.Module) -> torch.Tensor:
    dtype = next(module.parameters()).dtype
    if isinstance(signals, np.ndarray):
        signals = torch.from_numpy(signals)
    return signals.to(dtype)


@torch.no_grad()
def encode(encoder: Encoder, signals, batch_size: int = 256) -> torch.Tensor:
    """Embed signals in inference mode."""
    was_training = encoder.training
    encoder.eval()
    x = _as_tensor(signals, encoder)
    out = [encoder(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    encoder.train(was_training)
    if not out:
        return torch.zeros(0, encoder.config.embed_dim)
    return torch.cat(out)


@torch.no_grad()
def classify(encoder: Encoder, head: nn.Linear, signals) -> torch.Tensor:
    """Class probabilities (rows sum to one)."""
    if head.in_features != encoder.config.embed_dim:
        raise ConfigError(f"head expects {head.in_features}-D features, encoder gives {encoder.config.embed_dim}")
    return torch.softmax(head(encode(encoder, signals)), dim=1)


# ---------------------------------------------------------------------------
# image feature extractors


class ImageFeatureExtractor(Protocol):
    feature_dim: int

    def extract(self, images) -> torch.Tensor: ...


class TinyConvExtractor(nn.Module):
    """Small seeded random convolutional extractor. Never trained; used at desk scale."""

    def __init__(self, feature_dim: int = 128, seed: int = 0, width: int = 16):
        super().__init__()
        self.feature_dim = feature_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, width, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
                nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.LeakyReLU(0.2),
                nn.AdaptiveAvgPool2d(4), nn.Flatten(),
                nn.Linear(2 * width * 16, feature_dim),
            )
        self.requires_grad_(False)
        self.eval()

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images)

    @torch.no_grad()
    def extract(self, images, batch_size: int = 256) -> torch.Tensor:
        x = _as_tensor(images, self)
        return torch.cat([self.net(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def train(self, mode: bool = True):
        # frozen: always stays in inference mode
        return super().train(False)


class BackboneExtractor:
    """Adapter around an externally supplied frozen backbone (e.g. a TorchScript ResNet-50).

    Images arrive in [-1, 1]; they are mapped to [0, 1], optionally resized and
    standardized with ``mean``/``std`` before the backbone runs.
    """

    def __init__(self, module: nn.Module, feature_dim: int, input_size: Optional[int] = None,
                 mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)):
        self.module = module.eval()
        self.module.requires_grad_(False)
        self.feature_dim = feature_dim
        self.input_size = input_size
        self.mean = torch.tensor(mean).view(1, 3, 1, 1)
        self.std = torch.tensor(std).view(1, 3, 1, 1)

    @classmethod
    def load(cls, path: str | os.PathLike, feature_dim: int, input_size: Optional[int] = 224) -> "BackboneExtractor":
        return cls(torch.jit.load(str(path), map_location="cpu"), feature_dim, input_size)

    def parameters(self):
        return self.module.parameters()

    def named_parameters(self):
        return self.module.named_parameters()

    @torch.no_grad()
    def extract(self, images, batch_size: int = 64) -> torch.Tensor:
        x = torch.as_tensor(images, dtype=torch.float32)
        feats = []
        for i in range(0, len(x), batch_size):
            b = (x[i:i + batch_size] + 1) / 2
            if self.input_size and b.shape[-1] != self.input_size:
                b = F.interpolate(b, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False)
            b = (b - self.mean) / self.std
            feats.append(self.module(b).flatten(1))
        return torch.cat(feats)


def parameter_hash(module) -> str:
    """sha256 over every named parameter and buffer, in name order."""
    h = hashlib.sha256()
    tensors = dict(module.named_parameters())
    if hasattr(module, "named_buffers"):
        tensors.update(dict(module.named_buffers()))
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints: zip archive of config.json, params.json (names/shapes), params.f32, sha256


def _digest(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(hashlib.sha256(p).digest())
    return h.hexdigest()


def save_checkpoint(path: str | os.PathLike, kind: str, config: dict, state: dict[str, torch.Tensor],
                    metadata: Optional[dict] = None) -> str:
    names = sorted(state)
    index = [{"name": n, "shape": list(state[n].shape)} for n in names]
    blob = b"".join(state[n].detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
                    for n in names)
    cfg = json.dumps({"kind": kind, "config": config, "metadata": metadata or {}}, sort_keys=True).encode()
    idx = json.dumps(index).encode()
    digest = _digest(cfg, idx, blob)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for member, data in (("config.json", cfg), ("params.json", idx), ("params.f32", blob),
                             ("sha256", digest.encode())):
            info = zipfile.ZipInfo(member, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, data)
    return digest


def load_checkpoint(path: str | os.PathLike) -> tuple[str, dict, dict[str, torch.Tensor], dict]:
    """Returns (kind, config, state, metadata); rejects archives whose hash does not match."""
    try:
        with zipfile.ZipFile(path) as zf:
            cfg = zf.read("config.json")
            idx = zf.read("params.json")
            blob = zf.read("params.f32")
            stored = zf.read("sha256").decode().strip()
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise DataError(f"unreadable checkpoint {path}: {exc}") from exc
    if _digest(cfg, idx, blob) != stored:
        raise DataError(f"checkpoint {path} failed its content hash check")
    doc = json.loads(cfg)
    flat = np.frombuffer(blob, dtype="<f4")
    state, offset = {}, 0
    for entry in json.loads(idx):
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        state[entry["name"]] = torch.from_numpy(flat[offset:offset + n].copy()).reshape(entry["shape"])
        offset += n
    return doc["kind"], doc["config"], state, doc["metadata"]


def checkpoint_hash(path: str | os.PathLike) -> str:
    with zipfile.ZipFile(path) as zf:
        return zf.read("sha256").decode().strip()


def save_encoder(path, encoder: Encoder, head: Optional[nn.Linear] = None) -> str:
    state = {f"encoder.{k}": v for k, v in encoder.state_dict().items()}
    meta = dict(encoder.metadata)
    if head is not None:
        state.update({f"head.{k}": v for k, v in head.state_dict().items()})
        meta["num_classes"] = head.out_features
    return save_checkpoint(path, "encoder", asdict(encoder.config), state, meta)


def load_encoder(path) -> tuple[Encoder, Optional[nn.Linear]]:
    kind, config, state, meta = load_checkpoint(path)
    if kind != "encoder":
        raise DataError(f"{path} holds a {kind!r} checkpoint, not an encoder")
    encoder = Encoder(EncoderConfig.from_dict(config))
    encoder.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("encoder.")})
    encoder.metadata = meta
    head = None
    if "num_classes" in meta:
        head = nn.Linear(encoder.config.embed_dim, meta["num_classes"])
        head.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("head.")})
    return encoder, head
