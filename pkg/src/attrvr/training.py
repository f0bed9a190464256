"""Pattern training: per-epoch attribute re-query, cross-entropy on attribute
scores, SGD with momentum and cosine-annealed learning rate.

Also covers the label-template baselines (padded and overlay geometry), the
aggregation variants of the selection step, and evaluation including cross
combinations of pattern and scorer.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeBank
from .encoders import EncoderBackend, class_probabilities
from .errors import NumericError, ValidationError
from .reprogram import ImageSample, VRPattern, make_pattern, overlay_apply, pad_and_apply
from .scoring import (
    VARIANTS,
    ScoreConfig,
    SelectionTrace,
    _class_sims,
    class_scores,
    knn_select,
)

METHODS = ("attrvr", "ar", "vp")
DEFAULT_TEMPLATE = "This is a photo of {label}"


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 40.0
    momentum: float = 0.9
    batch_size: int = 64
    frame: int = 16
    k: int = 3
    lam: float = 0.5
    seed: int = 0
    method: str = "attrvr"
    variant: str = "knn"
    template: str = DEFAULT_TEMPLATE
    schedule: str = "cosine"
    clamp: bool = False
    resize_interior: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.schedule != "cosine":
            raise ValidationError(f"only the cosine schedule is supported, got {self.schedule!r}")

    @classmethod
    def from_toml(cls, path) -> "TrainConfig":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def score_config(self) -> ScoreConfig:
        rnd_seed = self.seed if self.variant == "rnd" else None
        return ScoreConfig(k=self.k, lam=self.lam, variant=self.variant, rnd_seed=rnd_seed)


@dataclass
class ExperimentRecord:
    """Per-run provenance: per-epoch history plus a final summary."""

    method: str
    config_hash: str
    history: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    trace: SelectionTrace | None = None

    def append_epoch(self, epoch, loss, train_acc, lr):
        self.history.append(
            {"epoch": int(epoch), "loss": float(loss), "train_acc": float(train_acc), "lr": float(lr)}
        )

    def save(self, history_path, summary_path):
        with open(history_path, "w", encoding="utf-8") as fh:
            for row in self.history:
                fh.write(json.dumps(row) + "\n")
        summary = {"method": self.method, "config_hash": self.config_hash, **self.final}
        with open(summary_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def cosine_lr(e: int, epochs: int, lr0: float) -> float:
    """Half-period cosine annealing from lr0 down to 0."""
    if not 0 <= e < epochs:
        raise ValidationError(f"epoch {e} outside [0, {epochs})")
    return lr0 * (1.0 + math.cos(math.pi * e / epochs)) / 2.0


def _class_names(bank_or_labels):
    if isinstance(bank_or_labels, AttributeBank):
        return bank_or_labels.classes
    return list(bank_or_labels)


def _apply(x: ImageSample, pattern: VRPattern, cfg: TrainConfig):
    if cfg.method == "vp":
        return overlay_apply(x, pattern, clamp=cfg.clamp)
    return pad_and_apply(x, pattern, resize_interior=cfg.resize_interior, clamp=cfg.clamp)


def _label_text_embeddings(bank_or_labels, cfg, backend):
    names = _class_names(bank_or_labels)
    mat = np.stack([backend.encode_text(cfg.template.format(label=n)) for n in names])
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


def _unit_rows(mat):
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


def select_attributes(z, bank: AttributeBank, cfg: TrainConfig, backend,
                      rng: np.random.Generator | None = None) -> dict:
    """Per-class attribute index selection for one embedding.

    knn -> top-k, max -> top-1, avg -> all m, rnd -> k seeded picks without
    replacement, mean -> centroid marker (no index selection).
    """
    out = {}
    for cls in bank.classes:
        if cfg.variant == "mean":
            out[cls] = "mean"
            continue
        if cfg.variant == "avg":
            out[cls] = (list(range(bank.m)), list(range(bank.m)))
            continue
        if cfg.variant == "rnd":
            if rng is None:
                raise ValidationError("variant 'rnd' needs a seeded generator")
            out[cls] = (
                [int(i) for i in rng.choice(bank.m, size=cfg.k, replace=False)],
                [int(i) for i in rng.choice(bank.m, size=cfg.k, replace=False)],
            )
            continue
        k_eff = 1 if cfg.variant == "max" else cfg.k
        des_sims = _class_sims(z, bank, cls, "des", backend.temperature)
        dist_sims = _class_sims(z, bank, cls, "dist", backend.temperature)
        out[cls] = (knn_select(des_sims, k_eff), knn_select(dist_sims, k_eff))
    return out


def _attr_weight_matrix(bank: AttributeBank, selections_for_sample, cfg, backend):
    """Per-class embedding-space weight vectors: score_y = row_y . z."""
    rows = []
    for cls in bank.classes:
        sel = selections_for_sample[cls]
        des = _unit_rows(bank.embedding_matrix(cls, "des"))
        dist = _unit_rows(bank.embedding_matrix(cls, "dist"))
        if sel == "mean":
            c_des = bank.embedding_matrix(cls, "des").mean(axis=0)
            c_dist = bank.embedding_matrix(cls, "dist").mean(axis=0)
            w = cfg.lam * c_des / np.linalg.norm(c_des)
            w = w + (1.0 - cfg.lam) * c_dist / np.linalg.norm(c_dist)
        else:
            des_idx, dist_idx = sel
            w = (cfg.lam / len(des_idx)) * des[list(des_idx)].sum(axis=0)
            w = w + ((1.0 - cfg.lam) / len(dist_idx)) * dist[list(dist_idx)].sum(axis=0)
        rows.append(w)
    return np.stack(rows) / backend.temperature


def ce_loss_and_grad(batch, pattern: VRPattern, bank_or_labels, cfg: TrainConfig,
                     backend: EncoderBackend, selections=None):
    """Cross-entropy loss over attribute (or label-template) scores and its
    gradient with respect to delta.

    selections: optional list, one entry per batch sample, of per-class
    selections freezing the top-k choice (the per-epoch re-query path). The
    top-k choice itself is treated as non-differentiable either way.
    """
    if not batch:
        raise ValidationError("batch must be nonempty")
    use_attrs = cfg.method == "attrvr"
    if not use_attrs:
        label_mat = _label_text_embeddings(bank_or_labels, cfg, backend)
    rnd_rng = np.random.default_rng(cfg.seed) if cfg.variant == "rnd" else None
    grad = np.zeros_like(pattern.delta)
    total = 0.0
    preds = []
    for bi, sample in enumerate(batch):
        x_t = _apply(sample, pattern, cfg)
        z = backend.encode_image(x_t)
        if use_attrs:
            sel = selections[bi] if selections is not None else select_attributes(
                z, bank_or_labels, cfg, backend, rnd_rng
            )
            weights = _attr_weight_matrix(bank_or_labels, sel, cfg, backend)
        else:
            weights = label_mat / backend.temperature
        scores = weights @ z
        probs = class_probabilities(scores)
        p_true = probs[sample.label]
        if p_true <= 0 or not np.isfinite(p_true):
            raise NumericError(
                f"non-finite loss for sample with label {sample.label}; scores={scores}"
            )
        total += -math.log(p_true)
        preds.append(int(np.argmax(probs)))
        g_scores = probs.copy()
        g_scores[sample.label] -= 1.0
        cotangent = weights.T @ g_scores
        grad += backend.image_vjp(x_t, cotangent) * pattern.mask
    n = len(batch)
    loss = total / n
    if not np.isfinite(loss):
        raise NumericError(f"non-finite batch loss over {n} samples")
    return loss, grad / n, preds


def train(dataset, bank, cfg: TrainConfig, backend: EncoderBackend,
          trace_selections: bool = True):
    """Full training loop; returns the final pattern and its run record.

    dataset is a few-shot split (object with .train) or a plain list of
    ImageSample. Deterministic under a fixed seed and backend.
    """
    samples = list(dataset.train) if hasattr(dataset, "train") else list(dataset)
    if not samples:
        raise ValidationError("empty training set")
    names = _class_names(bank)
    present = {s.label for s in samples}
    missing = [names[i] for i in range(len(names)) if i not in present]
    if missing:
        raise ValidationError(f"classes with no training samples: {missing}")

    c, h, w = backend.input_shape
    pattern = make_pattern((h, w), c, cfg.frame)
    velocity = np.zeros_like(pattern.delta)
    record = ExperimentRecord(method=cfg.method, config_hash=cfg.config_hash())
    use_attrs = cfg.method == "attrvr"
    selective = cfg.variant in ("knn", "max")
    trace = SelectionTrace() if (trace_selections and use_attrs and selective) else None
    record.trace = trace
    rng = np.random.default_rng(cfg.seed)
    rnd_rng = np.random.default_rng(cfg.seed + 1) if cfg.variant == "rnd" else None

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        frozen = None
        if use_attrs:
            # re-query the selected attributes once per sample per epoch
            frozen = []
            for i, s in enumerate(samples):
                z = backend.encode_image(_apply(s, pattern, cfg))
                sel = select_attributes(z, bank, cfg, backend, rnd_rng)
                frozen.append(sel)
                if trace is not None:
                    own = names[s.label]
                    trace.add(epoch, i, own, "des", sel[own][0], [])
                    trace.add(epoch, i, own, "dist", sel[own][1], [])
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        correct = 0
        for start in range(0, len(samples), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [samples[i] for i in idx]
            sel = [frozen[i] for i in idx] if frozen is not None else None
            loss, grad, preds = ce_loss_and_grad(batch, pattern, bank, cfg, backend, sel)
            epoch_loss += loss * len(batch)
            correct += sum(p == b.label for p, b in zip(preds, batch))
            velocity = cfg.momentum * velocity - lr * grad
            pattern.delta = (pattern.delta + velocity) * pattern.mask
        record.append_epoch(epoch, epoch_loss / len(samples), correct / len(samples), lr)
    return pattern, record


def evaluate(pattern: VRPattern, test_split, scorer, bank, backend: EncoderBackend,
             cfg: TrainConfig | None = None, apply_mode: str | None = None):
    """Top-1 and per-class accuracy of a pattern under a given scorer.

    scorer: 'attrvr', 'label', or a callable (embedding, sample) -> scores.
    apply_mode 'pad'|'overlay' defaults to the cfg method's geometry.
    """
    samples = list(test_split.test) if hasattr(test_split, "test") else list(test_split)
    if not samples:
        raise ValidationError("empty test split")
    cfg = cfg or TrainConfig(epochs=0)
    mode = apply_mode or ("overlay" if cfg.method == "vp" else "pad")
    names = _class_names(bank)
    if scorer == "label":
        label_mat = _label_text_embeddings(bank, cfg, backend)
    score_cfg = cfg.score_config()

    hits = {i: 0 for i in range(len(names))}
    counts = {i: 0 for i in range(len(names))}
    correct = 0
    for sample in samples:
        if mode == "overlay":
            x_t = overlay_apply(sample, pattern, clamp=cfg.clamp)
        else:
            x_t = pad_and_apply(sample, pattern, resize_interior=cfg.resize_interior,
                                clamp=cfg.clamp)
        z = backend.encode_image(x_t)
        if callable(scorer):
            scores = np.asarray(scorer(z, sample), dtype=np.float64)
        elif scorer == "attrvr":
            scores = class_scores(z, bank, score_cfg, backend.temperature)
        elif scorer == "label":
            scores = (label_mat @ z) / backend.temperature
        else:
            raise ValidationError(f"unknown scorer {scorer!r}")
        pred = int(np.argmax(scores))
        counts[sample.label] += 1
        if pred == sample.label:
            hits[sample.label] += 1
            correct += 1
    per_class = {}
    for i, name in enumerate(names):
        if counts[i] == 0:
            warnings.warn(f"class {name!r} absent from the test split; per-class accuracy NaN")
            per_class[name] = float("nan")
        else:
            per_class[name] = hits[i] / counts[i]
    return correct / len(samples), per_class
