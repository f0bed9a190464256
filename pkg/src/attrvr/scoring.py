"""Sample-specific attribute scoring.

k-nearest selection over per-class attribute similarities, the weighted
descriptive/distinctive aggregation, alternative aggregation variants
(max, avg, mean-centroid, seeded-random), and zero-shot prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeBank
from .encoders import EncoderBackend, class_probabilities, cosine
from .errors import NumericError, StateError, ValidationError
from .reprogram import ImageSample, bilinear_resize

VARIANTS = ("knn", "max", "avg", "mean", "rnd")


@dataclass
class ScoreConfig:
    k: int = 3
    lam: float = 0.5
    variant: str = "knn"
    rnd_seed: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.variant == "rnd" and self.rnd_seed is None:
            raise ValidationError("variant 'rnd' requires rnd_seed for reproducibility")


@dataclass
class SelectionTrace:
    """Selected attribute indices and similarities, one row per query."""

    rows: list = field(default_factory=list)

    def add(self, epoch, sample_id, cls, kind, indices, sims):
        self.rows.append(
            {
                "epoch": int(epoch),
                "sample_id": sample_id,
                "class": cls,
                "kind": kind,
                "indices": [int(i) for i in indices],
                "sims": [float(s) for s in sims],
            }
        )

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")


def knn_select(sims, k: int) -> list[int]:
    """Indices of the k largest similarities, descending; ties to lower index."""
    s = np.asarray(sims, dtype=np.float64)
    if k > s.size:
        raise ValidationError(f"k={k} exceeds number of attributes {s.size}")
    if not np.isfinite(s).all():
        raise ValidationError("similarities contain non-finite values")
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[:k]]


def _class_sims(sample_embedding, bank: AttributeBank, cls, kind, temperature):
    if bank.embeddings is None:
        raise StateError("bank embeddings not precomputed; call precompute_embeddings first")
    mat = bank.embedding_matrix(cls, kind)
    z = np.asarray(sample_embedding, dtype=np.float64)
    zn = np.linalg.norm(z)
    if zn == 0.0:
        raise NumericError("zero-norm sample embedding")
    norms = np.linalg.norm(mat, axis=1)
    return (mat @ z) / (norms * zn) / temperature


def sim_attr(sample_embedding, cls, bank, cfg: ScoreConfig, temperature=1.0,
             selections=None, trace=None, epoch=0, sample_id=None):
    """Weighted k-nearest attribute similarity for one (sample, class) pair.

    selections, when given, is a pre-frozen (des_indices, dist_indices) pair
    (the per-epoch re-query path); otherwise the top-k is selected here.
    """
    des_sims = _class_sims(sample_embedding, bank, cls, "des", temperature)
    dist_sims = _class_sims(sample_embedding, bank, cls, "dist", temperature)
    if selections is None:
        des_idx = knn_select(des_sims, cfg.k)
        dist_idx = knn_select(dist_sims, cfg.k)
    else:
        des_idx, dist_idx = selections
    if trace is not None:
        trace.add(epoch, sample_id, cls, "des", des_idx, des_sims[des_idx])
        trace.add(epoch, sample_id, cls, "dist", dist_idx, dist_sims[dist_idx])
    value = (cfg.lam / cfg.k) * float(des_sims[list(des_idx)].sum()) + (
        (1.0 - cfg.lam) / cfg.k
    ) * float(dist_sims[list(dist_idx)].sum())
    return value, (des_idx, dist_idx)


def score_variant(sample_embedding, cls, bank, cfg: ScoreConfig, temperature=1.0):
    """Aggregation variants: max, avg, mean (centroid), rnd, or knn."""
    if cfg.variant == "knn":
        value, _ = sim_attr(sample_embedding, cls, bank, cfg, temperature)
        return value
    des_sims = _class_sims(sample_embedding, bank, cls, "des", temperature)
    dist_sims = _class_sims(sample_embedding, bank, cls, "dist", temperature)
    lam = cfg.lam
    if cfg.variant == "max":
        return lam * float(des_sims[knn_select(des_sims, 1)[0]]) + (1 - lam) * float(
            dist_sims[knn_select(dist_sims, 1)[0]]
        )
    if cfg.variant == "avg":
        return lam * float(des_sims.mean()) + (1 - lam) * float(dist_sims.mean())
    if cfg.variant == "mean":
        # centroids over raw (pre-normalization of the mean) text embeddings
        z = np.asarray(sample_embedding, dtype=np.float64)
        c_des = bank.embedding_matrix(cls, "des").mean(axis=0)
        c_dist = bank.embedding_matrix(cls, "dist").mean(axis=0)
        if np.linalg.norm(c_des) == 0.0 or np.linalg.norm(c_dist) == 0.0:
            raise NumericError(f"zero-norm attribute centroid for class {cls!r}")
        return (lam * cosine(z, c_des) + (1 - lam) * cosine(z, c_dist)) / temperature
    if cfg.variant == "rnd":
        rng = np.random.default_rng(cfg.rnd_seed)
        des_pick = rng.choice(des_sims.size, size=cfg.k, replace=False)
        dist_pick = rng.choice(dist_sims.size, size=cfg.k, replace=False)
        return lam * float(des_sims[des_pick].mean()) + (1 - lam) * float(
            dist_sims[dist_pick].mean()
        )
    raise ValidationError(f"unknown variant {cfg.variant!r}")


def class_scores(sample_embedding, bank, cfg: ScoreConfig, temperature=1.0):
    """Vector of attribute scores over bank.classes for one sample embedding."""
    if cfg.variant == "knn":
        return np.array(
            [sim_attr(sample_embedding, c, bank, cfg, temperature)[0] for c in bank.classes]
        )
    return np.array(
        [score_variant(sample_embedding, c, bank, cfg, temperature) for c in bank.classes]
    )


def attrzs_predict(image: ImageSample, bank, cfg: ScoreConfig, backend: EncoderBackend):
    """Zero-shot prediction: resize to the backend input, no trained pattern."""
    c, h, w = backend.input_shape
    resized = bilinear_resize(image.pixels, (h, w))
    z = backend.encode_image(resized)
    scores = class_scores(z, bank, cfg, backend.temperature)
    probs = class_probabilities(scores)
    return int(np.argmax(probs)), probs
