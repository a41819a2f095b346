"""Command-line entry point: ``eegvis <command> [options]``.

Every run writes under ``--out``::

    checkpoints/   model archives
    reports/       JSON metric reports, embedding CSVs, ranked results
    images/        PNG mosaics with sidecar CSVs
    logs/          history CSVs, run_config.json, input_hashes.json

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from eegvis import clip as clip_mod
from eegvis import data as data_mod
from eegvis import evaluation as ev
from eegvis import gan as gan_mod
from eegvis import metric
from eegvis.encoders import (
    BackboneExtractor, EncoderConfig, TinyConvExtractor, build_encoder, build_head, checkpoint_hash, encode,
    load_encoder, save_encoder,
)
from eegvis.errors import ConfigError, DataError
from eegvis.runtime import seed_everything, tree_sha256, write_csv

logger = logging.getLogger("eegvis")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
CACHE_ENV = "EEGVIS_CACHE_DIR"
ALL_METRICS = ("kmeans", "svm", "knn", "topk", "mrr", "map", "is", "fid", "kid")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fast", action="store_true", help="relax deterministic mode for throughput")
    if manifest:
        p.add_argument("--manifest", required=True, help="EEGPACK container directory")


def _train_args(p, epochs=30, batch_size=48, lr=1e-3):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--optimizer", choices=["adaptive_moments", "sgd_momentum"], default="adaptive_moments")
    p.add_argument("--checkpoint-every", type=int, default=0)


def _encoder_args(p):
    p.add_argument("--kind", choices=["lstm", "cnn"], default="lstm")
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--lstm-layers", type=int, default=2)
    p.add_argument("--lstm-hidden", type=int, default=128)
    p.add_argument("--cnn-widths", type=_int_list, default=[32, 64, 128, 256])
    p.add_argument("--normalize", choices=["auto", "yes", "no"], default="auto",
                   help="L2-normalize encoder output (auto: on for triplet/CLIP, off for supervised)")


def _extractor_args(p):
    p.add_argument("--extractor", default="tiny",
                   help="'tiny' for the built-in seeded extractor, or a TorchScript backbone path")
    p.add_argument("--extractor-dim", type=int, default=128)
    p.add_argument("--extractor-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eegvis", description=__doc__.split("\n")[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-synthetic", help="write a synthetic EEGPACK container to OUT/data")
    _common(p, manifest=False)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--channels", type=int, default=14)
    p.add_argument("--timesteps", type=int, default=32)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--image-size", type=int, default=0)
    p.add_argument("--attribute-scale", type=float, default=0.0)
    p.add_argument("--latency-jitter", type=int, default=0)
    p.add_argument("--subjects", type=int, default=1)

    p = sub.add_parser("train-encoder", help="train an EEG encoder (supervised or triplet)")
    _common(p)
    p.add_argument("--regime", choices=["supervised", "triplet"], required=True)
    _encoder_args(p)
    _train_args(p)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--mining", choices=["semi_hard", "all_valid"], default="semi_hard")
    p.add_argument("--exclude-classes", type=_int_list, default=[],
                   help="train on a copy of the dataset without these classes")

    p = sub.add_parser("finetune", help="supervised training initialized from an encoder checkpoint")
    _common(p)
    p.add_argument("--encoder", required=True)
    _train_args(p, epochs=20)

    p = sub.add_parser("train-clip", help="joint EEG-image embedding against a frozen image extractor")
    _common(p)
    p.add_argument("--encoder", help="initialize the EEG encoder from this checkpoint")
    _encoder_args(p)
    _extractor_args(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--temperature", type=float, default=0.07)
    p.add_argument("--fixed-temperature", action="store_true")
    p.add_argument("--projection-dim", type=int, default=128)
    p.add_argument("--eval-split", default="test")

    p = sub.add_parser("train-gan", help="train the conditional GAN")
    _common(p)
    p.add_argument("--encoder", help="frozen EEG encoder checkpoint (required for --condition eeg)")
    p.add_argument("--condition", choices=["eeg", "one-hot"], default="eeg")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--noise-dim", type=int, default=64)
    p.add_argument("--lr-g", type=float, default=2e-3)
    p.add_argument("--lr-d", type=float, default=2e-3)
    p.add_argument("--no-ada", action="store_true")
    p.add_argument("--r1-gamma", type=float, default=1.0)
    p.add_argument("--eval-every", type=int, default=250)

    p = sub.add_parser("synthesize", help="synthesize images from EEG records of a split")
    _common(p)
    p.add_argument("--generator", required=True)
    p.add_argument("--encoder", help="EEG encoder checkpoint (eeg-conditioned generators)")
    p.add_argument("--split", default="test")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--cols", type=int, default=8)

    p = sub.add_parser("translate-image", help="map images into EEG feature space and reconstruct them")
    _common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--generator", required=True)
    _extractor_args(p)
    p.add_argument("--split", default="test", help="split whose images are translated")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--ridge", type=float, default=1e-3)

    p = sub.add_parser("evaluate", help="compute metrics from exported embeddings / features / probabilities")
    _common(p, manifest=False)
    p.add_argument("--metrics", required=True, help=f"comma list from {','.join(ALL_METRICS)}")
    p.add_argument("--embeddings", help="embedding CSV (kmeans, svm/knn test set, topk/mrr/map)")
    p.add_argument("--train-embeddings", help="embedding CSV used to fit svm/knn")
    p.add_argument("--probs", help=".npy class-probability matrix (is)")
    p.add_argument("--real-features", help=".npy feature matrix (fid/kid)")
    p.add_argument("--fake-features", help=".npy feature matrix (fid/kid)")
    p.add_argument("--k", type=int, default=5, help="kNN neighbours")
    p.add_argument("--topk", type=_int_list, default=[1, 5, 10])
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--is-splits", type=int, default=10)
    p.add_argument("--kid-subset", type=int, default=100)
    p.add_argument("--kid-subsets", type=int, default=50)

    p = sub.add_parser("zero-shot", help="probe a frozen encoder on held-out classes")
    _common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--holdout", type=_int_list, required=True)

    p = sub.add_parser("export-embeddings", help="write encoder embeddings of a split to CSV")
    _common(p)
    p.add_argument("--encoder", required=True)
    p.add_argument("--split", default="test")
    return parser


# ---------------------------------------------------------------------------


def _layout(out: Path) -> dict[str, Path]:
    dirs = {name: out / name for name in ("checkpoints", "reports", "images", "logs")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _snapshot(args, dirs, inputs) -> None:
    cfg = {k: v for k, v in vars(args).items()}
    with open(dirs["logs"] / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    with open(dirs["logs"] / "input_hashes.json", "w", encoding="utf-8") as fh:
        json.dump(tree_sha256([i for i in inputs if i]), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _encoder_config(args, manifest, regime: str) -> EncoderConfig:
    normalize = {"yes": True, "no": False}.get(args.normalize, regime != "supervised")
    return EncoderConfig(
        kind=args.kind, input_channels=manifest.channels, input_timesteps=manifest.timesteps,
        embed_dim=args.embed_dim, lstm_layers=args.lstm_layers, lstm_hidden=args.lstm_hidden,
        cnn_channel_widths=list(args.cnn_widths), normalize_output=normalize,
    )


def _train_config(args) -> metric.TrainConfig:
    return metric.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                              optimizer=args.optimizer, seed=args.seed, checkpoint_every=args.checkpoint_every)


def _extractor(args):
    if args.extractor == "tiny":
        return TinyConvExtractor(args.extractor_dim, seed=args.extractor_seed)
    if not Path(args.extractor).is_file():
        raise DataError(f"image backbone not found: {args.extractor}")
    return BackboneExtractor.load(args.extractor, args.extractor_dim)


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_make_synthetic(args, dirs):
    spec = data_mod.SyntheticSpec(
        num_classes=args.classes, channels=args.channels, timesteps=args.timesteps,
        records_per_class=args.per_class, class_separation=args.separation, noise_scale=args.noise,
        seed=args.seed, image_size=args.image_size, attribute_scale=args.attribute_scale,
        latency_jitter=args.latency_jitter, num_subjects=args.subjects,
    )
    m = data_mod.make_synthetic(spec, Path(args.out) / "data")
    _write_json(dirs["reports"] / "dataset.json", {**m.to_json(), "dataset_hash": data_mod.container_hash(m)})
    print(m.root)


def cmd_train_encoder(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    if args.exclude_classes:
        base = Path(os.environ.get(CACHE_ENV) or Path(args.out) / "data")
        dest = base / f"exclude-{'-'.join(map(str, args.exclude_classes))}"
        manifest = data_mod.select_classes(manifest, args.exclude_classes, dest, exclude=True)
    encoder = build_encoder(_encoder_config(args, manifest, args.regime), seed=args.seed)
    tc = _train_config(args)
    ckdir = dirs["checkpoints"] / "epochs" if args.checkpoint_every else None
    if args.regime == "triplet":
        encoder, history = metric.train_triplet(encoder, manifest, metric.TripletConfig(args.margin, args.mining),
                                                tc, ckdir)
        write_csv(dirs["logs"] / "history.csv", history, metric.TRIPLET_HISTORY_COLUMNS)
        head = None
    else:
        head = build_head(encoder.config.embed_dim, manifest.num_classes, seed=args.seed)
        encoder, head, history = metric.train_supervised(encoder, head, manifest, tc, ckdir)
        write_csv(dirs["logs"] / "history.csv", history, metric.SUPERVISED_HISTORY_COLUMNS)
    digest = save_encoder(dirs["checkpoints"] / "encoder.ckpt", encoder, head)
    _write_json(dirs["reports"] / "train_summary.json", {"final": history[-1], "checkpoint_hash": digest,
                                                         "train_classes": encoder.metadata["train_classes"]})


def cmd_finetune(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    encoder, head = load_encoder(args.encoder)
    if head is None or head.out_features != manifest.num_classes:
        head = build_head(encoder.config.embed_dim, manifest.num_classes, seed=args.seed)
    encoder, head, history = metric.train_supervised(encoder, head, manifest, _train_config(args),
                                                     dirs["checkpoints"] / "epochs" if args.checkpoint_every else None)
    write_csv(dirs["logs"] / "history.csv", history, metric.SUPERVISED_HISTORY_COLUMNS)
    digest = save_encoder(dirs["checkpoints"] / "encoder.ckpt", encoder, head)
    _write_json(dirs["reports"] / "train_summary.json", {"final": history[-1], "checkpoint_hash": digest})


def cmd_train_clip(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    if args.encoder:
        encoder, _ = load_encoder(args.encoder)
    else:
        encoder = build_encoder(_encoder_config(args, manifest, "clip"), seed=args.seed)
    extractor = _extractor(args)
    cfg = clip_mod.ClipConfig(temperature=args.temperature, learn_temperature=not args.fixed_temperature,
                              projection_dim=args.projection_dim, epochs=args.epochs, batch_size=args.batch_size,
                              learning_rate=args.lr, seed=args.seed)
    model, history = clip_mod.train_clip(encoder, extractor, manifest, cfg)
    write_csv(dirs["logs"] / "history.csv", history, clip_mod.CLIP_HISTORY_COLUMNS)
    digest = clip_mod.save_clip(dirs["checkpoints"] / "clip.ckpt", model, cfg)
    report = clip_mod.evaluate_clip(model, extractor, manifest, args.eval_split, batch_size=args.batch_size)
    ev.write_report(dirs["reports"] / "retrieval.json", "retrieval", report, config=asdict(cfg),
                    dataset_hash=data_mod.container_hash(manifest), checkpoint_hash=digest)

    data = data_mod.load_split(manifest, args.eval_split)
    feats = extractor.extract(torch.from_numpy(data_mod.load_images(manifest, data.image_ids))).float()
    with torch.no_grad():
        gallery = model.embed_image_features(feats).double().numpy()
        queries = model.embed_eeg(torch.from_numpy(data.signals)).double().numpy()
    index = clip_mod.build_index(gallery, data.image_ids)
    clip_mod.save_index(index, dirs["checkpoints"] / "index")
    k = min(5, len(index.keys))
    ranked = {str(rid): clip_mod.retrieve(index, q, k) for rid, q in zip(data.record_ids, queries)}
    clip_mod.write_ranked_csv(dirs["reports"] / "ranked.csv", ranked)


def cmd_train_gan(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    mode = "one_hot" if args.condition == "one-hot" else "eeg_feature"
    if mode == "eeg_feature" and not args.encoder:
        raise ConfigError("--condition eeg requires --encoder")
    cfg = gan_mod.GanConfig(image_size=args.image_size, condition_mode=mode, noise_dim=args.noise_dim,
                            steps=args.steps, batch_size=args.batch_size, lr_g=args.lr_g, lr_d=args.lr_d,
                            ada_enabled=not args.no_ada, r1_gamma=args.r1_gamma, seed=args.seed,
                            eval_every=args.eval_every)
    encoder = load_encoder(args.encoder)[0] if mode == "eeg_feature" else None
    G, _, history = gan_mod.train_gan(manifest, encoder, cfg, dirs["checkpoints"] / "generator.ckpt")
    write_csv(dirs["logs"] / "history.csv", history, gan_mod.GAN_HISTORY_COLUMNS)
    fids = [r["fid_eval"] for r in history if r["fid_eval"] is not None]
    ev.write_report(dirs["reports"] / "fid.json", "fid_eval", fids[-1], config=asdict(cfg),
                    dataset_hash=data_mod.container_hash(manifest),
                    checkpoint_hash=checkpoint_hash(dirs["checkpoints"] / "generator.ckpt"))
    _grid(G, manifest, encoder, cfg, "test" if manifest.splits.get("test") else "train", 16, 8, args.seed,
          dirs["images"] / "samples.png")


def _grid(G, manifest, encoder, cfg, split, count, cols, seed, path):
    data = gan_mod.conditioning_data(manifest, cfg, encoder, split)
    n = min(count, len(data.images))
    z = torch.randn(n, G.noise_dim, generator=torch.Generator().manual_seed(seed))
    imgs = gan_mod.synthesize(G, data.conditions[:n], z)
    meta = [{"class": int(data.labels[i]), "eeg_record_id": int(data.record_ids[i]), "seed": seed} for i in range(n)]
    gan_mod.write_grid(imgs, path, cols, meta)


def cmd_synthesize(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    G, cfg, _ = gan_mod.load_generator(args.generator)
    encoder = None
    if cfg.condition_mode == "eeg_feature":
        if not args.encoder:
            raise ConfigError("this generator is EEG-conditioned; pass --encoder")
        encoder = load_encoder(args.encoder)[0]
    _grid(G, manifest, encoder, cfg, args.split, args.count, args.cols, args.seed, dirs["images"] / "synthesized.png")


def cmd_translate_image(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    encoder, _ = load_encoder(args.encoder)
    G, cfg, _ = gan_mod.load_generator(args.generator)
    if G.cond_dim != encoder.config.embed_dim:
        raise ConfigError("generator condition size does not match the encoder's feature size")
    extractor = _extractor(args)
    translator, mse = gan_mod.fit_image_to_eeg(extractor, encoder, manifest, ridge=args.ridge)
    data = data_mod.load_split(manifest, args.split)
    n = min(args.count, len(data))
    images = data_mod.load_images(manifest, data.image_ids[:n])
    out = gan_mod.translate_and_synthesize(G, translator, extractor, images, seed=args.seed)
    meta = [{"class": int(data.labels[i]), "eeg_record_id": int(data.record_ids[i]), "seed": args.seed}
            for i in range(n)]
    gan_mod.write_grid(torch.from_numpy(images), dirs["images"] / "inputs.png", args.cols, meta)
    gan_mod.write_grid(out, dirs["images"] / "reconstructed.png", args.cols, meta)
    ev.write_report(dirs["reports"] / "translation.json", "translation_val_mse", mse,
                    config={"ridge": args.ridge, "extractor": args.extractor},
                    dataset_hash=data_mod.container_hash(manifest), checkpoint_hash=checkpoint_hash(args.encoder))


def _load_matrix(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_evaluate(args, dirs):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(metrics) - set(ALL_METRICS))
    if unknown:
        raise ConfigError(f"unknown metrics {unknown}")
    cfg = {k: getattr(args, k) for k in ("k", "topk", "restarts", "is_splits", "kid_subset", "kid_subsets")}

    def need(attr, metric_name):
        v = getattr(args, attr)
        if not v:
            raise ConfigError(f"metric {metric_name} needs --{attr.replace('_', '-')}")
        if not Path(v).is_file():
            raise DataError(f"missing input file {v}")
        return v

    summary = {}
    for name in metrics:
        std = None
        if name in ("kmeans", "svm", "knn", "topk", "mrr", "map"):
            ids, labels, _, emb = ev.read_embeddings(need("embeddings", name))
        if name == "kmeans":
            value = ev.kmeans_accuracy(emb, labels, seed=args.seed, restarts=args.restarts)
        elif name in ("svm", "knn"):
            _, tr_labels, _, tr_emb = ev.read_embeddings(need("train_embeddings", name))
            value = (ev.linear_probe_accuracy(tr_emb, tr_labels, emb, labels, seed=args.seed) if name == "svm"
                     else ev.knn_accuracy(tr_emb, tr_labels, emb, labels, k=args.k))
        elif name in ("topk", "mrr", "map"):
            results = _leave_one_out(ids, labels, emb)
            value = {"topk": lambda: {str(k): v for k, v in ev.topk_accuracy(results, args.topk).items()},
                     "mrr": lambda: ev.mrr(results), "map": lambda: ev.mean_average_precision(results)}[name]()
        elif name == "is":
            value, std = ev.inception_score(_load_matrix(need("probs", name)), splits=args.is_splits)
        else:
            real = _load_matrix(need("real_features", name))
            fake = _load_matrix(need("fake_features", name))
            if name == "fid":
                value = ev.fid(ev.GaussianStats.from_features(real), ev.GaussianStats.from_features(fake))
            else:
                value, std = ev.kid(real, fake, args.kid_subset, args.kid_subsets, seed=args.seed)
        doc = ev.write_report(dirs["reports"] / f"{name}.json", name, value, std=std, config=cfg,
                              dataset_hash=_hash_of(args.embeddings))
        summary[name] = doc["value"]
    print(json.dumps(summary, sort_keys=True))


def _hash_of(path):
    if path and Path(path).is_file():
        return tree_sha256([path])[str(Path(path))]
    return None


def _leave_one_out(ids, labels, emb):
    """Each record queries all others; same-label candidates are relevant."""
    results = []
    for i in range(len(ids)):
        rest = np.arange(len(ids)) != i
        cand_ids = [int(c) for c in ids[rest]]
        cand_labels = dict(zip(cand_ids, labels[rest].tolist()))
        results += ev.rank_by_similarity([int(ids[i])], emb[i:i + 1], cand_ids, emb[rest],
                                         lambda q, c, lab=int(labels[i]): cand_labels[c] == lab)
    return results


def cmd_zero_shot(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    encoder, _ = load_encoder(args.encoder)
    report = ev.zero_shot_protocol(manifest, args.holdout, encoder, seed=args.seed)
    ev.write_report(dirs["reports"] / "zero_shot.json", "zero_shot", report,
                    config={"holdout": args.holdout}, dataset_hash=data_mod.container_hash(manifest),
                    checkpoint_hash=checkpoint_hash(args.encoder))


def cmd_export_embeddings(args, dirs):
    manifest = data_mod.load_manifest(args.manifest)
    encoder, _ = load_encoder(args.encoder)
    n = ev.export_embeddings(encoder, manifest, args.split, dirs["reports"] / f"embeddings_{args.split}.csv")
    print(n)


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "train-encoder": cmd_train_encoder,
    "finetune": cmd_finetune,
    "train-clip": cmd_train_clip,
    "train-gan": cmd_train_gan,
    "synthesize": cmd_synthesize,
    "translate-image": cmd_translate_image,
    "evaluate": cmd_evaluate,
    "zero-shot": cmd_zero_shot,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"eegvis: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        seed_everything(args.seed, deterministic=not args.fast)
        dirs = _layout(Path(args.out))
        inputs = [getattr(args, k, None) for k in ("manifest", "encoder", "generator", "embeddings",
                                                   "train_embeddings", "probs", "real_features", "fake_features")]
        _snapshot(args, dirs, inputs)
        COMMANDS[args.command](args, dirs)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        logger.exception("run failed")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
