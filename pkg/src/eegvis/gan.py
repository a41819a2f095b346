"""EEG-conditioned image synthesis at desk scale.

A compact conditional GAN: the generator maps [condition, z] through a dense
layer to a 4x4 map and upsamples to ``image_size``; the discriminator mirrors it
and scores the condition by projection. Adaptive discriminator augmentation
(ADA) raises or lowers the augmentation probability from the sign of the
discriminator's outputs on real images. Also: the image -> EEG feature
translator used to synthesize from unseen images.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from eegvis.data import DatasetManifest, load_images, load_split
from eegvis.encoders import Encoder, TinyConvExtractor, encode, load_checkpoint, load_encoder, save_checkpoint
from eegvis.errors import ConfigError, DataError
from eegvis.evaluation import GaussianStats, fid

logger = logging.getLogger(__name__)


@dataclass
class GanConfig:
    image_size: int = 32
    condition_mode: str = "eeg_feature"  # or "one_hot"
    noise_dim: int = 64
    steps: int = 2000
    batch_size: int = 32
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    ada_enabled: bool = True
    ada_target: float = 0.6
    ada_step: float = 1e-3
    ada_interval: int = 4
    r1_gamma: float = 1.0
    r1_interval: int = 4
    base_channels: int = 64
    seed: int = 0
    eval_every: int = 250
    eval_samples: int = 256
    log_every: int = 10

    def validate(self) -> None:
        s = self.image_size
        if s < 8 or s & (s - 1):
            raise ConfigError("image_size must be a power of two >= 8")
        if self.condition_mode not in ("eeg_feature", "one_hot"):
            raise ConfigError(f"unknown condition_mode {self.condition_mode!r}")
        if self.noise_dim <= 0 or self.steps < 0 or self.batch_size < 2:
            raise ConfigError("noise_dim > 0, steps >= 0 and batch_size >= 2 required")
        if not 0 <= self.ada_target <= 1 or self.ada_step < 0:
            raise ConfigError("ada_target must lie in [0, 1] and ada_step >= 0")


def _channels(base: int, image_size: int) -> list[int]:
    n_up = int(np.log2(image_size)) - 2
    return [max(base >> i, 16) for i in range(n_up + 1)]


class Generator(nn.Module):
    def __init__(self, cond_dim: int, noise_dim: int, image_size: int = 32, base_channels: int = 64):
        super().__init__()
        self.cond_dim, self.noise_dim, self.image_size = cond_dim, noise_dim, image_size
        ch = _channels(base_channels, image_size)
        self.fc = nn.Linear(cond_dim + noise_dim, ch[0] * 16)
        blocks = []
        for c_in, c_out in zip(ch[:-1], ch[1:]):
            blocks += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(c_in, c_out, 3, padding=1), nn.LeakyReLU(0.2),
                       nn.Conv2d(c_out, c_out, 3, padding=1), nn.LeakyReLU(0.2)]
        self.blocks = nn.Sequential(*blocks)
        self.to_rgb = nn.Conv2d(ch[-1], 3, 3, padding=1)
        self.c0 = ch[0]

    def forward(self, cond: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if cond.shape[1] != self.cond_dim or z.shape[1] != self.noise_dim:
            raise ConfigError(f"generator expects condition {self.cond_dim}-D and noise {self.noise_dim}-D")
        h = F.leaky_relu(self.fc(torch.cat([cond, z], dim=1)), 0.2).view(-1, self.c0, 4, 4)
        return torch.tanh(self.to_rgb(self.blocks(h)))


class Discriminator(nn.Module):
    def __init__(self, cond_dim: int, image_size: int = 32, base_channels: int = 64, hidden: int = 256):
        super().__init__()
        ch = _channels(base_channels, image_size)[::-1]
        layers = [nn.Conv2d(3, ch[0], 3, padding=1), nn.LeakyReLU(0.2)]
        for c_in, c_out in zip(ch[:-1], ch[1:]):
            layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.LeakyReLU(0.2),
                       nn.Conv2d(c_out, c_out, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.features = nn.Sequential(*layers, nn.Flatten())
        self.fc = nn.Linear(ch[-1] * 16, hidden)
        self.out = nn.Linear(hidden, 1)
        self.embed = nn.Linear(cond_dim, hidden, bias=False)

    def forward(self, images: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.fc(self.features(images)), 0.2)
        return self.out(h).squeeze(1) + (self.embed(cond) * h).sum(1)


def synthesize(generator: Generator, eeg_feature, z) -> torch.Tensor:
    """Images (B x 3 x H x W, values in [-1, 1]) for conditions and noise; 1-D inputs give one image."""
    cond = torch.as_tensor(eeg_feature, dtype=torch.float32)
    noise = torch.as_tensor(z, dtype=torch.float32)
    single = cond.dim() == 1
    if single:
        cond, noise = cond[None], noise[None]
    if not torch.all(torch.isfinite(cond)):
        raise ValueError("condition must be finite")
    was_training = generator.training
    generator.eval()
    with torch.no_grad():
        out = generator(cond, noise)
    generator.train(was_training)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# adaptive discriminator augmentation


@dataclass(frozen=True)
class AdaState:
    p: float = 0.0
    overfit_estimate: float = 0.0
    target: float = 0.6
    adjustment_step: float = 1e-3


def ada_update(state: AdaState, discriminator_outputs) -> AdaState:
    """r = mean(sign(D(real))); p <- clamp(p + step * sign(r - target), 0, 1)."""
    out = torch.as_tensor(discriminator_outputs).detach().flatten()
    if out.numel() == 0:
        raise ValueError("empty discriminator output batch")
    r = float(torch.sign(out).mean())
    delta = float(np.sign(r - state.target)) * state.adjustment_step
    return replace(state, p=float(min(max(state.p + delta, 0.0), 1.0)), overfit_estimate=r)


def augment(images: torch.Tensor, p: float, generator: torch.Generator) -> torch.Tensor:
    """Horizontal flip, integer translation (<= 1/8 of the side, reflect padding) and colour
    jitter (brightness, contrast, saturation), each applied per image with probability p.
    Differentiable with respect to ``images``."""
    if p <= 0:
        return images
    B, _, H, W = images.shape
    x = images

    def coin():
        return (torch.rand(B, generator=generator) < p).float().view(B, 1, 1, 1)

    flip = coin()
    x = flip * x.flip(3) + (1 - flip) * x

    m = max(1, H // 8)
    do = coin().view(B)
    shifts = torch.randint(-m, m + 1, (B, 2), generator=generator) * do.long()[:, None]
    padded = F.pad(x, (m, m, m, m), mode="reflect")
    x = torch.stack([padded[i, :, m + dy:m + dy + H, m + dx:m + dx + W]
                     for i, (dy, dx) in enumerate(shifts.tolist())])

    b = coin() * torch.randn(B, 1, 1, 1, generator=generator) * 0.2
    x = x + b
    c = torch.exp2(coin() * torch.randn(B, 1, 1, 1, generator=generator) * 0.5)
    mu = x.mean(dim=(1, 2, 3), keepdim=True)
    x = (x - mu) * c + mu
    s = torch.exp2(coin() * torch.randn(B, 1, 1, 1, generator=generator))
    luma = x.mean(dim=1, keepdim=True)
    return (x - luma) * s + luma


# ---------------------------------------------------------------------------
# training


@dataclass
class GanData:
    images: torch.Tensor  # M x 3 x H x W in [-1, 1]
    conditions: torch.Tensor  # M x cond_dim
    labels: np.ndarray
    record_ids: np.ndarray


def conditioning_data(manifest: DatasetManifest, config: GanConfig, encoder: Optional[Encoder],
                      split: str = "train") -> GanData:
    """Images with their conditions: frozen-encoder EEG features, or one-hot labels."""
    data = load_split(manifest, split)
    if any(not k for k in data.image_ids):
        raise DataError(f"split {split!r} has records without paired images")
    images = torch.from_numpy(load_images(manifest, data.image_ids))
    if images.shape[-1] != config.image_size:
        images = F.interpolate(images, size=(config.image_size, config.image_size), mode="bilinear",
                               align_corners=False)
    if config.condition_mode == "one_hot":
        if data.labels.size == 0 or manifest.num_classes < 2:
            raise DataError("one-hot conditioning needs labelled records")
        cond = F.one_hot(torch.from_numpy(data.labels), manifest.num_classes).float()
    else:
        if encoder is None:
            raise ConfigError("eeg_feature conditioning needs a frozen EEG encoder")
        if encoder.config.input_channels != manifest.channels:
            raise ConfigError("encoder channels do not match the dataset")
        cond = encode(encoder, data.signals).float()
    return GanData(images.float(), cond, data.labels, data.record_ids)


def _hash_params(module: nn.Module) -> str:
    from eegvis.encoders import parameter_hash
    return parameter_hash(module)


class FidProbe:
    """Fixed evaluation slice: conditions, noise and real-image statistics stay constant."""

    def __init__(self, data: GanData, config: GanConfig, extractor=None):
        g = torch.Generator().manual_seed(config.seed + 12345)
        n = min(config.eval_samples, len(data.images))
        idx = torch.randperm(len(data.images), generator=g)[:n]
        self.cond = data.conditions[idx]
        self.z = torch.randn(n, config.noise_dim, generator=g)
        self.extractor = extractor or TinyConvExtractor(feature_dim=64, seed=4242)
        self.real = GaussianStats.from_features(self.extractor.extract(data.images).double().numpy())

    def __call__(self, generator: Generator) -> float:
        fake = synthesize(generator, self.cond, self.z)
        return fid(self.real, GaussianStats.from_features(self.extractor.extract(fake).double().numpy()))


def discriminator_step(G, D, opt_d, real, cond, z, p, aug_rng, config: GanConfig, r1: bool):
    """One D update with G frozen; returns (raw D outputs on reals, loss)."""
    G.requires_grad_(False)
    D.requires_grad_(True)
    with torch.no_grad():
        fake = G(cond, z)
    real_in = augment(real, p, aug_rng)
    if r1:
        real_in = real_in.detach().requires_grad_(True)
    d_real = D(real_in, cond)
    d_fake = D(augment(fake, p, aug_rng), cond)
    loss = F.softplus(d_fake).mean() + F.softplus(-d_real).mean()
    if r1:
        # lazy regularization: scaled by the interval so the average strength is r1_gamma
        (grad,) = torch.autograd.grad(d_real.sum(), real_in, create_graph=True)
        loss = loss + config.r1_gamma / 2 * grad.pow(2).sum(dim=(1, 2, 3)).mean() * config.r1_interval
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    G.requires_grad_(True)
    return d_real.detach(), loss.item()


def generator_step(G, D, opt_g, cond, z, p, aug_rng) -> float:
    """One G update through a frozen D."""
    G.requires_grad_(True)
    D.requires_grad_(False)
    loss = F.softplus(-D(augment(G(cond, z), p, aug_rng), cond)).mean()
    opt_g.zero_grad()
    loss.backward()
    opt_g.step()
    D.requires_grad_(True)
    return loss.item()


def train_gan(
    manifest: DatasetManifest,
    encoder: Optional[Encoder | str | os.PathLike],
    config: GanConfig = GanConfig(),
    checkpoint_path: Optional[str | os.PathLike] = None,
    fid_extractor=None,
) -> tuple[Generator, Discriminator, list[dict]]:
    """Non-saturating logistic GAN loss with lazy R1 on reals and optional ADA.

    History rows every ``log_every`` steps: step, g_loss, d_loss, ada_p, fid_eval
    (fid_eval filled at step 0, every ``eval_every`` steps and at the last step).
    """
    config.validate()
    if isinstance(encoder, (str, os.PathLike)):
        encoder, _ = load_encoder(encoder)
    if encoder is not None:
        encoder.eval()
        encoder.requires_grad_(False)
    data = conditioning_data(manifest, config, encoder)
    cond_dim = data.conditions.shape[1]

    torch.manual_seed(config.seed)
    G = Generator(cond_dim, config.noise_dim, config.image_size, config.base_channels)
    D = Discriminator(cond_dim, config.image_size, config.base_channels)
    opt_g = torch.optim.Adam(G.parameters(), lr=config.lr_g, betas=(0.0, 0.99))
    opt_d = torch.optim.Adam(D.parameters(), lr=config.lr_d, betas=(0.0, 0.99))
    rng = torch.Generator().manual_seed(config.seed + 1)
    aug_rng = torch.Generator().manual_seed(config.seed + 2)
    probe = FidProbe(data, config, fid_extractor)
    ada = AdaState(target=config.ada_target, adjustment_step=config.ada_step)
    signs: list[torch.Tensor] = []

    history = []
    g_acc, d_acc = [], []
    fid0 = probe(G)
    history.append({"step": 0, "g_loss": None, "d_loss": None, "ada_p": ada.p, "fid_eval": fid0})
    M, B = len(data.images), config.batch_size
    for step in range(1, config.steps + 1):
        idx = torch.randint(0, M, (B,), generator=rng)
        real, cond = data.images[idx], data.conditions[idx]
        z = torch.randn(B, config.noise_dim, generator=rng)
        p = ada.p if config.ada_enabled else 0.0

        d_real, d_loss = discriminator_step(G, D, opt_d, real, cond, z, p, aug_rng, config,
                                            r1=config.r1_gamma > 0 and step % config.r1_interval == 0)
        if config.ada_enabled:
            signs.append(d_real)
            if step % config.ada_interval == 0:
                ada = ada_update(ada, torch.cat(signs))
                signs = []
        z = torch.randn(B, config.noise_dim, generator=rng)
        g_loss = generator_step(G, D, opt_g, cond, z, p, aug_rng)

        g_acc.append(g_loss)
        d_acc.append(d_loss)
        eval_now = step == config.steps or (config.eval_every and step % config.eval_every == 0)
        if step % config.log_every == 0 or eval_now:
            row = {"step": step, "g_loss": float(np.mean(g_acc)), "d_loss": float(np.mean(d_acc)),
                   "ada_p": ada.p, "fid_eval": probe(G) if eval_now else None}
            history.append(row)
            g_acc, d_acc = [], []
            if eval_now:
                logger.info("gan step %d g %.3f d %.3f p %.3f fid %.2f", step, row["g_loss"], row["d_loss"],
                            ada.p, row["fid_eval"])
    G.eval()
    D.eval()
    if checkpoint_path is not None:
        save_generator(checkpoint_path, G, config, {"condition_mode": config.condition_mode,
                                                     "encoder": dict(encoder.metadata) if encoder else None})
    return G, D, history


GAN_HISTORY_COLUMNS = ("step", "g_loss", "d_loss", "ada_p", "fid_eval")


def save_generator(path, generator: Generator, config: GanConfig, metadata: Optional[dict] = None) -> str:
    cfg = asdict(config)
    cfg["cond_dim"] = generator.cond_dim
    return save_checkpoint(path, "generator", cfg, generator.state_dict(), metadata)


def load_generator(path) -> tuple[Generator, GanConfig, dict]:
    kind, cfg, state, meta = load_checkpoint(path)
    if kind != "generator":
        raise DataError(f"{path} holds a {kind!r} checkpoint, not a generator")
    cond_dim = cfg.pop("cond_dim")
    config = GanConfig(**{k: v for k, v in cfg.items() if k in GanConfig.__dataclass_fields__})
    G = Generator(cond_dim, config.noise_dim, config.image_size, config.base_channels)
    G.load_state_dict(state)
    G.eval()
    return G, config, meta


# ---------------------------------------------------------------------------
# image -> EEG feature translation


@dataclass
class Translator:
    """Affine map from image-feature space to EEG-feature space."""

    weight: torch.Tensor  # D_img x D_eeg
    bias: torch.Tensor
    renormalize: bool = False

    def __call__(self, image_features) -> torch.Tensor:
        x = torch.as_tensor(image_features, dtype=self.weight.dtype)
        y = x @ self.weight + self.bias
        return F.normalize(y, dim=1) if self.renormalize else y


def fit_translator(image_features, eeg_features, renormalize: bool = False, ridge: float = 0.0) -> Translator:
    """Least-squares affine fit (optionally ridge-regularized) of EEG features on image features."""
    x = torch.as_tensor(np.asarray(image_features), dtype=torch.float64)
    y = torch.as_tensor(np.asarray(eeg_features), dtype=torch.float64)
    if len(x) == 0 or len(x) != len(y):
        raise DataError("need paired, non-empty feature sets")
    xa = torch.cat([x, torch.ones(len(x), 1, dtype=x.dtype)], dim=1)
    if ridge > 0:
        reg = ridge * torch.eye(xa.shape[1], dtype=x.dtype)
        reg[-1, -1] = 0
        sol = torch.linalg.solve(xa.T @ xa + reg, xa.T @ y)
    else:
        sol = torch.linalg.lstsq(xa, y, driver="gelsd").solution
    return Translator(sol[:-1], sol[-1], renormalize)


def translation_mse(translator: Translator, image_features, eeg_features) -> float:
    pred = translator(image_features)
    y = torch.as_tensor(np.asarray(eeg_features), dtype=pred.dtype)
    return float(((pred - y) ** 2).mean())


def fit_image_to_eeg(image_extractor, eeg_encoder: Encoder, manifest: DatasetManifest,
                     ridge: float = 1e-3) -> tuple[Translator, float]:
    """Fit on paired train records (both encoders frozen); report MSE on the val split
    (or the test split when val is empty)."""

    def pairs(split):
        data = load_split(manifest, split)
        if len(data) == 0 or any(not k for k in data.image_ids):
            raise DataError(f"split {split!r} has no paired records")
        img = image_extractor.extract(torch.from_numpy(load_images(manifest, data.image_ids)))
        return img.double().numpy(), encode(eeg_encoder, data.signals).double().numpy()

    xi, ye = pairs("train")
    T = fit_translator(xi, ye, renormalize=eeg_encoder.config.normalize_output, ridge=ridge)
    held = "val" if manifest.splits.get("val") else "test"
    xv, yv = pairs(held)
    return T, translation_mse(T, xv, yv)


def translate_and_synthesize(generator: Generator, translator: Translator, image_extractor, images,
                             z=None, seed: int = 0) -> torch.Tensor:
    """Unseen images -> EEG feature space -> generator."""
    feats = translator(image_extractor.extract(torch.as_tensor(images, dtype=torch.float32))).float()
    if z is None:
        z = torch.randn(len(feats), generator.noise_dim, generator=torch.Generator().manual_seed(seed))
    return synthesize(generator, feats, z)


# ---------------------------------------------------------------------------
# output


def write_grid(images: torch.Tensor, path: str | os.PathLike, cols: int,
               sidecar: Optional[Sequence[dict]] = None) -> None:
    """PNG mosaic of [-1, 1] images in row-major order plus a sidecar CSV
    (row, col, class, eeg_record_id, seed) when ``sidecar`` is given."""
    imgs = ((images.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8).permute(0, 2, 3, 1).numpy()
    n, h, w, _ = imgs.shape
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * h, cols * w, 3), dtype=np.uint8)
    for i, im in enumerate(imgs):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = im
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas).save(path)
    if sidecar is not None:
        with open(Path(path).with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["row", "col", "class", "eeg_record_id", "seed"])
            for i, meta in enumerate(sidecar):
                r, c = divmod(i, cols)
                wr.writerow([r, c, meta.get("class", ""), meta.get("eeg_record_id", ""), meta.get("seed", "")])
