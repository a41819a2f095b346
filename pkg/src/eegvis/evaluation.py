"""Evaluation metrics: clustering/probe accuracy, retrieval ranking metrics and
generative metrics (Inception Score, FID, KID), plus embedding export."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.linear_model import SGDClassifier

from eegvis.errors import ConfigError, LeakageError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# clustering and probes


def matched_accuracy(labels, clusters) -> float:
    """Accuracy after the best one-to-one cluster -> class assignment."""
    labels = np.asarray(labels)
    clusters = np.asarray(clusters)
    _, y = np.unique(labels, return_inverse=True)
    _, c = np.unique(clusters, return_inverse=True)
    table = np.zeros((c.max() + 1, y.max() + 1), dtype=np.int64)
    np.add.at(table, (c, y), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / len(labels))


def kmeans_accuracy(embeddings, labels, k: Optional[int] = None, seed: int = 0, restarts: int = 10) -> float:
    """K-means (k-means++ init, best of ``restarts`` by inertia) scored by matched accuracy."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    k = k or len(np.unique(labels))
    if len(x) < k:
        raise ConfigError(f"need at least {k} points for {k} clusters, got {len(x)}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, random_state=seed)
    return matched_accuracy(labels, km.fit_predict(x))


def linear_probe_accuracy(train_x, train_y, test_x, test_y, reg: float = 1e-3, seed: int = 0) -> float:
    """One-vs-rest linear hinge-loss classifier with L2 penalty ``reg`` on frozen features."""
    train_y = np.asarray(train_y)
    if len(np.unique(train_y)) < 2:
        raise ConfigError("linear probe needs at least two classes in the train set")
    clf = SGDClassifier(loss="hinge", alpha=reg, max_iter=2000, tol=1e-6, random_state=seed)
    clf.fit(np.asarray(train_x, dtype=np.float64), train_y)
    return float((clf.predict(np.asarray(test_x, dtype=np.float64)) == np.asarray(test_y)).mean())


def knn_predict(train_x, train_y, test_x, k: int = 5) -> np.ndarray:
    """Majority vote over the k nearest (Euclidean); ties go to the tied label seen nearest."""
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    test_x = np.asarray(test_x, dtype=np.float64)
    k = min(k, len(train_x))
    d = cdist(test_x, train_x)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    preds = np.empty(len(test_x), dtype=train_y.dtype)
    for i, nbrs in enumerate(order):
        votes = train_y[nbrs]
        vals, counts = np.unique(votes, return_counts=True)
        tied = set(vals[counts == counts.max()].tolist())
        preds[i] = next(v for v in votes if v in tied)
    return preds


def knn_accuracy(train_x, train_y, test_x, test_y, k: int = 5) -> float:
    return float((knn_predict(train_x, train_y, test_x, k) == np.asarray(test_y)).mean())


def zero_shot_protocol(manifest, holdout_classes: Sequence[int], encoder, seed: int = 0,
                       k: int = 5, reg: float = 1e-3) -> dict:
    """Probe a frozen encoder on classes it never trained on.

    Probe-train set: unseen-class train records; probe-test set: unseen-class test
    records (val is used when test is absent). k-means runs on the probe-test set.
    """
    from eegvis.data import load_split
    from eegvis.encoders import encode

    holdout = sorted(int(c) for c in holdout_classes)
    if len(holdout) < 2:
        raise ConfigError("need at least two held-out classes")
    seen = set(encoder.metadata.get("train_classes", []))
    if not encoder.metadata.get("dataset_hashes"):
        raise LeakageError("encoder carries no training provenance; cannot audit for leakage")
    leaked = seen.intersection(holdout)
    if leaked:
        raise LeakageError(f"held-out classes {sorted(leaked)} were used to train the encoder")

    def unseen(split):
        data = load_split(manifest, split)
        return data.subset(np.isin(data.labels, holdout))

    probe_train = unseen("train")
    probe_test = unseen("test" if manifest.splits.get("test") else "val")
    tr = encode(encoder, probe_train.signals).numpy()
    te = encode(encoder, probe_test.signals).numpy()
    return {
        "holdout_classes": holdout,
        "kmeans": kmeans_accuracy(te, probe_test.labels, seed=seed),
        "svm": linear_probe_accuracy(tr, probe_train.labels, te, probe_test.labels, reg=reg, seed=seed),
        "knn": knn_accuracy(tr, probe_train.labels, te, probe_test.labels, k=k),
        "n_probe_train": len(probe_train),
        "n_probe_test": len(probe_test),
    }


# ---------------------------------------------------------------------------
# ranking metrics


@dataclass
class RankedResult:
    query_id: str
    ranked_ids: list
    relevance: list  # bool per ranked candidate

    def __post_init__(self):
        if len(self.ranked_ids) != len(self.relevance):
            raise ValueError("ranked_ids and relevance must align")
        if len(set(self.ranked_ids)) != len(self.ranked_ids):
            raise ValueError("ranking must not repeat candidates")


def _first_hit(r: RankedResult) -> Optional[int]:
    for i, rel in enumerate(r.relevance):
        if rel:
            return i + 1
    return None


def topk_accuracy(results: Sequence[RankedResult], k_list=(1, 5, 10)) -> dict[int, float]:
    """Fraction of queries with a relevant candidate within the top k."""
    out = {}
    for k in k_list:
        hits = [(h := _first_hit(r)) is not None and h <= k for r in results]
        out[k] = float(np.mean(hits)) if results else 0.0
    return out


def mrr(results: Sequence[RankedResult]) -> float:
    ranks = [_first_hit(r) for r in results]
    return float(np.mean([1.0 / h if h else 0.0 for h in ranks]))


def average_precision(r: RankedResult) -> float:
    rel = np.asarray(r.relevance, dtype=bool)
    if not rel.any():
        return 0.0
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    return float(precision[rel].mean())


def mean_average_precision(results: Sequence[RankedResult]) -> float:
    return float(np.mean([average_precision(r) for r in results]))


def rank_by_similarity(query_ids, query_emb, cand_ids, cand_emb, relevant) -> list[RankedResult]:
    """Rank candidates by cosine similarity; ``relevant(qid, cid)`` marks hits."""
    q = np.asarray(query_emb, dtype=np.float64)
    c = np.asarray(cand_emb, dtype=np.float64)
    q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    c = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-12)
    sims = q @ c.T
    out = []
    for i, qid in enumerate(query_ids):
        order = np.argsort(-sims[i], kind="stable")
        ranked = [cand_ids[j] for j in order]
        out.append(RankedResult(qid, ranked, [bool(relevant(qid, cid)) for cid in ranked]))
    return out


# ---------------------------------------------------------------------------
# generative metrics


def inception_score(probs, splits: int = 10) -> tuple[float, float]:
    """exp(E_x KL(p(y|x) || p(y))) per split; returns (mean, std) across splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or len(p) < splits:
        raise ConfigError(f"need an M x K probability matrix with M >= splits ({splits})")
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(kl.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if self.cov.shape != (len(self.mean), len(self.mean)):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8, rtol=0):
            raise ValueError("covariance must be symmetric")
        if self.count < 2:
            raise ValueError("need at least two samples")

    @classmethod
    def from_features(cls, feats) -> "GaussianStats":
        f = np.asarray(feats, dtype=np.float64)
        cov = np.cov(f, rowvar=False)
        return cls(f.mean(axis=0), (cov + cov.T) / 2, len(f))


def _psd_sqrt(m: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    if w.min() < -tol * max(1.0, abs(w).max()):
        logger.warning("clipping eigenvalue %.3g while taking a PSD square root", w.min())
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(C_a + C_b - 2 (C_a C_b)^{1/2}).

    tr((C_a C_b)^{1/2}) is evaluated as tr((S C_b S)^{1/2}) with S = C_a^{1/2},
    which shares its spectrum and stays symmetric.
    """
    diff = a.mean - b.mean
    s = _psd_sqrt(a.cov)
    inner = s @ b.cov @ s
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0, None)).sum()
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_sqrt
    return float(max(value, 0.0))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m, n = len(x), len(y)
    kxx = polynomial_kernel(x, x)
    kyy = polynomial_kernel(y, y)
    kxy = polynomial_kernel(x, y)
    return float(
        (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
        - 2 * kxy.mean()
    )


def kid(feats_a, feats_b, subset_size: int = 100, subsets: int = 50, seed: int = 0) -> tuple[float, float]:
    """Unbiased MMD^2 with kernel (x.y/D + 1)^3, averaged over random subsets."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    m = min(subset_size, len(a), len(b))
    if m < 2:
        raise ConfigError("KID needs at least two samples per set")
    rng = np.random.default_rng(seed)
    vals = [
        mmd2_unbiased(a[rng.choice(len(a), m, replace=False)], b[rng.choice(len(b), m, replace=False)])
        for _ in range(subsets)
    ]
    return float(np.mean(vals)), float(np.std(vals))


# ---------------------------------------------------------------------------
# export / reports


def export_embeddings(encoder, manifest, split: str, path: str | os.PathLike) -> int:
    """CSV rows: record_id, label, subject, e_1..e_D. Returns the row count."""
    from eegvis.data import load_split
    from eegvis.encoders import encode

    data = load_split(manifest, split)
    emb = encode(encoder, data.signals).numpy().astype(np.float64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "label", "subject"] + [f"e_{i + 1}" for i in range(emb.shape[1])])
        for rid, lab, sub, row in zip(data.record_ids, data.labels, data.subjects, emb):
            w.writerow([int(rid), int(lab), int(sub)] + [repr(float(v)) for v in row])
    return len(emb)


def read_embeddings(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (record_ids, labels, subjects, embeddings) from an exported CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    subjects = np.array([int(r[2]) for r in body], dtype=np.int64)
    emb = np.array([[float(v) for v in r[3:]] for r in body], dtype=np.float64)
    return ids, labels, subjects, emb


def write_report(path: str | os.PathLike, metric: str, value, std=None, config=None,
                 dataset_hash: Optional[str] = None, checkpoint_hash: Optional[str] = None) -> dict:
    doc = {"metric": metric, "value": value, "config": config or {},
           "dataset_hash": dataset_hash, "checkpoint_hash": checkpoint_hash}
    if std is not None:
        doc["std"] = std
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc
