"""Class-separability metric and empirical checkers for the attribute-pull
versus label-pull embedding dynamics.

The checker validates the three inequalities (per-class variance traces,
pairwise mean distances, overall separability) on synthetic paired embedding
sets generated under the stated hypotheses. It is a numerical validator,
not a proof engine: when a hypothesis is unmet it flags that instead of
asserting the inequality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ValidationError


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) int class ids

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValidationError("embeddings must be (N, d) with one label per row")

    @property
    def class_ids(self):
        return sorted(set(int(y) for y in self.labels))

    def class_rows(self, y):
        return self.embeddings[self.labels == y]


def cs(embedding_set: LabeledEmbeddingSet):
    """Class separability: mean inter-class squared distance minus mean
    intra-class variance trace. Returns (cs, intra per class, inter per pair)."""
    ids = embedding_set.class_ids
    if len(ids) < 2:
        raise ValidationError("class separability needs at least 2 classes")
    means = {}
    intra = {}
    for y in ids:
        rows = embedding_set.class_rows(y)
        if rows.shape[0] == 0:
            raise ValidationError(f"class {y} has no samples")
        mu = rows.mean(axis=0)
        means[y] = mu
        intra[y] = float(((rows - mu) ** 2).sum(axis=1).mean())
    inter = {}
    for y in ids:
        for yp in ids:
            if y != yp:
                diff = means[y] - means[yp]
                inter[(y, yp)] = float(diff @ diff)
    value = -float(np.mean(list(intra.values()))) + float(np.mean(list(inter.values())))
    return value, intra, inter


def attr_frequencies(table, labels):
    """Per-class attribute presence U and exclusivity V from a binary
    (sample, attribute) indicator table. Shapes: (|Y|, A) each."""
    t = np.asarray(table, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if t.ndim != 2 or t.shape[0] != y.shape[0]:
        raise ValidationError("table must be (N, A) with one label per row")
    ids = sorted(set(int(v) for v in y))
    n_total = t.shape[0]
    U = np.zeros((len(ids), t.shape[1]))
    V = np.zeros((len(ids), t.shape[1]))
    for row, cls in enumerate(ids):
        in_cls = y == cls
        n_cls = int(in_cls.sum())
        if n_cls == 0:
            raise ValidationError(f"class {cls} has zero samples")
        U[row] = t[in_cls].sum(axis=0) / n_cls
        others = n_total - n_cls
        if others == 0:
            raise ValidationError("V undefined with a single class holding all samples")
        V[row] = 1.0 - t[~in_cls].sum(axis=0) / others
    return U, V


def top_m_by(scores, m: int):
    """Indices of the m highest scores, descending, ties to lower index."""
    s = np.asarray(scores, dtype=np.float64)
    if m > s.size:
        raise ValidationError(f"m={m} exceeds number of attributes {s.size}")
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[:m]]


def indicator_table(embeddings, attr_embeddings, threshold=None):
    """Binary f_a(x) table from cosine similarity against attribute vectors.

    Default threshold is the per-attribute median similarity over the
    dataset (balanced indicator). Returns (table, thresholds)."""
    z = np.asarray(embeddings, dtype=np.float64)
    a = np.asarray(attr_embeddings, dtype=np.float64)
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    sims = zn @ an.T
    if threshold is None:
        thresholds = np.median(sims, axis=0)
    else:
        thresholds = np.full(a.shape[0], float(threshold))
    return (sims > thresholds[None, :]).astype(np.int8), thresholds


@dataclass
class LemmaCheckConfig:
    n_classes: int = 5
    samples_per_class: int = 40
    dim: int = 64
    n_dist_attrs: int = 12  # per class; hypothesis requires > n_classes
    n_des_attrs: int = 12
    pull: float = 0.5  # pull strength toward the supervision target
    push: float = 0.02  # per-attribute repulsion from other classes' DistAttrs
    attr_spread: float = 0.15  # spread of DesAttr vectors around the class mean
    label_offset: float = 0.8  # offset of the label prompt from the class mean
    noise: float = 1.0  # base within-class sample spread
    identify_prob: float = 0.7  # chance an attribute is identified in a sample
    seed: int = 0
    degenerate: bool = False  # attribute dynamics collapse onto label dynamics


def _generate_paired_sets(cfg: LemmaCheckConfig):
    """Paired embedding sets for the same samples under the two dynamics.

    Label path: each sample is pulled toward its class's label-prompt vector.
    Attribute path: each sample is averaged toward its identified DesAttr
    embeddings (unidentified attributes contribute the attribute's own mean
    vector, which sits near the class mean), then translated away from the
    other classes' DistAttr centers.
    """
    rng = np.random.default_rng(cfg.seed)
    labels = np.repeat(np.arange(cfg.n_classes), cfg.samples_per_class)
    centers = rng.normal(scale=3.0, size=(cfg.n_classes, cfg.dim))
    base = centers[labels] + rng.normal(scale=cfg.noise, size=(labels.size, cfg.dim))

    # label prompts share a template, so they cluster around a common point
    prompt_center = rng.normal(scale=3.0, size=cfg.dim)
    label_prompts = prompt_center[None, :] + cfg.label_offset * rng.normal(
        size=(cfg.n_classes, cfg.dim)
    )
    des_attrs = centers[:, None, :] + cfg.attr_spread * rng.normal(
        size=(cfg.n_classes, cfg.n_des_attrs, cfg.dim)
    )
    dist_attrs = centers[:, None, :] + cfg.attr_spread * rng.normal(
        size=(cfg.n_classes, cfg.n_dist_attrs, cfg.dim)
    )

    z_label = base + cfg.pull * (label_prompts[labels] - base)

    if cfg.degenerate:
        return LabeledEmbeddingSet(z_label, labels), LabeledEmbeddingSet(z_label.copy(), labels), {
            "attr_mean_closer": True
        }

    identified = rng.random((labels.size, cfg.n_des_attrs)) < cfg.identify_prob
    # guarantee at least one identified attribute per sample
    none = ~identified.any(axis=1)
    identified[none, 0] = True

    z_attr = np.empty_like(base)
    attr_means = des_attrs.mean(axis=1)  # per-class mean of DesAttr vectors
    for i, y in enumerate(labels):
        pulled = base[i] + cfg.pull * (des_attrs[y] - base[i])  # (n_des, d)
        contributions = np.where(identified[i][:, None], pulled, des_attrs[y])
        z_attr[i] = contributions.mean(axis=0)

    # repulsion from other classes' DistAttr centers, applied per class so it
    # translates class means without touching within-class spread
    dist_centers = dist_attrs.mean(axis=1)
    for y in range(cfg.n_classes):
        shift = np.zeros(cfg.dim)
        for yp in range(cfg.n_classes):
            if yp == y:
                continue
            direction = centers[y] - dist_centers[yp]
            norm = np.linalg.norm(direction)
            if norm > 0:
                shift += cfg.push * cfg.n_dist_attrs * direction / norm
        z_attr[labels == y] += shift

    attr_gap = np.linalg.norm(attr_means - centers, axis=1).mean()
    label_gap = np.linalg.norm(label_prompts - centers, axis=1).mean()
    extras = {"attr_mean_closer": bool(attr_gap < label_gap)}
    return LabeledEmbeddingSet(z_attr, labels), LabeledEmbeddingSet(z_label, labels), extras


def lemma_check(cfg: LemmaCheckConfig, out_path=None) -> dict:
    """Run the paired-dynamics generator and test the three inequalities."""
    set_a, set_l, extras = _generate_paired_sets(cfg)
    cs_a, intra_a, inter_a = cs(set_a)
    cs_l, intra_l, inter_l = cs(set_l)

    lemma1_ok = all(intra_a[y] <= intra_l[y] + 1e-12 for y in intra_a)
    hypothesis_met = cfg.n_dist_attrs > cfg.n_classes
    if hypothesis_met:
        lemma2 = {
            "hypothesis_met": True,
            "holds": all(inter_a[p] >= inter_l[p] - 1e-12 for p in inter_a),
        }
    else:
        lemma2 = {"hypothesis_met": False, "holds": None}
    corollary_ok = bool(cs_a > cs_l) if not cfg.degenerate else bool(cs_a >= cs_l)

    report = {
        "config": asdict(cfg),
        "per_class": {
            str(y): {"trace_A": intra_a[y], "trace_L": intra_l[y]} for y in intra_a
        },
        "pairs": {
            f"{y}-{yp}": {"d_A": inter_a[(y, yp)], "d_L": inter_l[(y, yp)]}
            for (y, yp) in inter_a
            if y < yp
        },
        "cs": {"A": cs_a, "L": cs_l},
        "checks": {
            "lemma1": bool(lemma1_ok),
            "lemma2": lemma2,
            "corollary": corollary_ok,
            "attr_mean_closer_assumption": extras["attr_mean_closer"],
        },
    }
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
