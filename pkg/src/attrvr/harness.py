"""Experiment orchestration: the synthetic shapes-7 task, few-shot splits,
study grids, an append-only results store, embedding export and reporting.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from filelock import FileLock

from .attributes import AttributeBank
from .encoders import EncoderBackend
from .errors import ValidationError
from .reprogram import ImageSample, VRPattern, pad_and_apply, overlay_apply
from .training import TrainConfig, evaluate, train

SHAPES7_CLASSES = [
    "crimson circle",
    "azure square",
    "emerald triangle",
    "golden cross",
    "violet ring",
    "coral stripes",
    "teal checker",
]

_SHAPES7_COLORS = [
    (0.85, 0.10, 0.15),
    (0.10, 0.45, 0.90),
    (0.10, 0.75, 0.35),
    (0.95, 0.80, 0.10),
    (0.55, 0.20, 0.80),
    (1.00, 0.50, 0.40),
    (0.00, 0.50, 0.50),
]


def _shape_mask(class_id, hw, rng):
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w]
    cy = h / 2 + rng.uniform(-1.5, 1.5)
    cx = w / 2 + rng.uniform(-1.5, 1.5)
    r = min(h, w) * rng.uniform(0.28, 0.38)
    if class_id == 0:  # circle
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    if class_id == 1:  # square
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if class_id == 2:  # triangle
        return (yy - cy >= -r) & (np.abs(xx - cx) <= (yy - cy + r) * 0.6)
    if class_id == 3:  # cross
        t = max(1.0, r * 0.4)
        return ((np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= r)) | (
            (np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= r)
        )
    if class_id == 4:  # ring
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r**2) & (d2 >= (r * 0.55) ** 2)
    if class_id == 5:  # stripes
        period = max(2, int(round(rng.uniform(3, 4))))
        return ((yy + int(rng.integers(0, period))) // (period // 2 + 1)) % 2 == 0
    if class_id == 6:  # checker
        cell = max(2, int(round(rng.uniform(3, 4))))
        return ((yy // cell) + (xx // cell)) % 2 == 0
    raise ValidationError(f"unknown shapes-7 class id {class_id}")


def render_shapes7_image(class_id, rng, hw=(16, 16)) -> np.ndarray:
    """One procedurally rendered (3, H, W) sample for a shapes-7 class."""
    h, w = hw
    mask = _shape_mask(class_id, hw, rng)
    color = np.array(_SHAPES7_COLORS[class_id])
    bg = rng.uniform(0.05, 0.25)
    img = np.full((3, h, w), bg)
    jitter = 1.0 + rng.uniform(-0.1, 0.1)
    for c in range(3):
        img[c][mask] = np.clip(color[c] * jitter, 0.0, 1.0)
    img += rng.normal(scale=0.05, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_shapes7(n_per_class=48, seed=0, hw=(16, 16)):
    """Seeded shapes-7 dataset: (samples, class names)."""
    rng = np.random.default_rng(seed)
    samples = []
    for cid in range(len(SHAPES7_CLASSES)):
        for _ in range(n_per_class):
            samples.append(ImageSample(render_shapes7_image(cid, rng, hw), cid))
    return samples, list(SHAPES7_CLASSES)


def load_manifest(path):
    """JSONL manifest of {path_or_generator, class_name} rows.

    Generators use the form 'shapes7:<class name>:<seed>'; plain entries are
    image file paths loaded through Pillow. Class ids follow first appearance.
    """
    samples = []
    classes: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            name = row["class_name"]
            if name not in classes:
                classes.append(name)
            label = classes.index(name)
            src = row["path_or_generator"]
            if src.startswith("shapes7:"):
                _, cls_name, gen_seed = src.split(":")
                cid = SHAPES7_CLASSES.index(cls_name)
                rng = np.random.default_rng(int(gen_seed))
                pixels = render_shapes7_image(cid, rng)
            else:
                from PIL import Image

                with Image.open(src) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
                pixels = arr.transpose(2, 0, 1)
            samples.append(ImageSample(pixels, label))
    if not samples:
        raise ValidationError(f"{path}: empty manifest")
    return samples, classes


@dataclass
class FewShotSplit:
    train: list
    val: list
    test: list
    seed: int
    n: int


def make_splits(dataset, n, seed) -> FewShotSplit:
    """Per-class uniform sampling without replacement of n training shots;
    the remainder is split evenly into val and test."""
    samples = list(dataset)
    by_class: dict[int, list] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for label in sorted(by_class):
        pool = by_class[label]
        if len(pool) < n:
            raise ValidationError(
                f"class {label} has only {len(pool)} samples, needs at least {n}"
            )
        order = rng.permutation(len(pool))
        chosen = [pool[i] for i in order[:n]]
        rest = [pool[i] for i in order[n:]]
        train.extend(chosen)
        half = len(rest) // 2
        val.extend(rest[:half])
        test.extend(rest[half:])
    return FewShotSplit(train=train, val=val, test=test, seed=seed, n=n)


STUDIES = ("ablation", "shots", "hyper", "aggregation", "crosstest", "single")


@dataclass
class StudySpec:
    study: str = "single"
    grid: dict = field(default_factory=dict)
    repeats: int = 1

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValidationError(f"study must be one of {STUDIES}, got {self.study!r}")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        return cls(
            study=doc.get("study", "single"),
            grid=doc.get("grid", {}),
            repeats=doc.get("repeats", 1),
        )


def append_result(path, row):
    """Append one result row to the JSONL store under an advisory lock."""
    lock = FileLock(str(path) + ".lock")
    with lock:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_results(path):
    if not os.path.exists(path):
        return []
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _arm_configs(spec: StudySpec, base: TrainConfig):
    """Expand a study spec into (arm name, config, scorer, extras) tuples."""
    if spec.study == "single":
        return [("base", base, "attrvr" if base.method == "attrvr" else "label", {})]
    if spec.study == "ablation":
        return [
            ("w/o VR", replace(base, epochs=0), "attrvr", {}),
            ("w/o DesAttrs", replace(base, lam=0.0), "attrvr", {}),
            ("w/o DistAttrs", replace(base, lam=1.0), "attrvr", {}),
            ("w/o both Attrs", replace(base, method="ar"), "label", {}),
            ("ours", base, "attrvr", {}),
        ]
    if spec.study == "shots":
        shots = spec.grid.get("n", [1, 4, 8, 16, 32])
        return [(f"n={n}", base, "attrvr", {"n": int(n)}) for n in shots]
    if spec.study == "hyper":
        arms = []
        for lam in spec.grid.get("lam", []):
            arms.append((f"lam={lam}", replace(base, lam=float(lam)), "attrvr", {}))
        for k in spec.grid.get("k", []):
            arms.append((f"k={k}", replace(base, k=int(k)), "attrvr", {}))
        if not arms:
            raise ValidationError("hyper study needs a 'lam' or 'k' grid")
        return arms
    if spec.study == "aggregation":
        variants = spec.grid.get("variant", ["max", "avg", "mean", "rnd", "knn"])
        return [(v, replace(base, variant=v), "attrvr", {}) for v in variants]
    if spec.study == "crosstest":
        return [
            ("Label", replace(base, method="ar"), "label", {}),
            ("Label2Attr", replace(base, method="ar"), "attrvr", {}),
            ("Attr2Label", base, "label", {}),
            ("Attr", base, "attrvr", {}),
        ]
    raise ValidationError(f"unknown study {spec.study!r}")


def run_study(spec: StudySpec, base: TrainConfig, bank: AttributeBank,
              backend: EncoderBackend, dataset, out_dir, n_shots=16):
    """Run every (arm, seed) cell, appending rows to a resumable results store.

    Completed cells (matched by config hash + arm + seed) are skipped; arm
    failures are recorded as failed rows and the study continues.
    """
    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.jsonl")
    done = {
        (r["study"], r["arm"], r["seed"], r["config_hash"])
        for r in read_results(results_path)
        if r.get("status") == "ok"
    }
    rows = []
    for arm, cfg_arm, scorer, extras in _arm_configs(spec, base):
        for rep in range(spec.repeats):
            cfg = replace(cfg_arm, seed=cfg_arm.seed + rep)
            key = (spec.study, arm, cfg.seed, cfg.config_hash())
            if key in done:
                continue
            row = {
                "study": spec.study,
                "arm": arm,
                "seed": cfg.seed,
                "config_hash": cfg.config_hash(),
                "metric": "test_accuracy",
            }
            try:
                n = extras.get("n", n_shots)
                split = make_splits(dataset, n, seed=cfg.seed)
                pattern, _ = train(split, bank, cfg, backend, trace_selections=False)
                acc, _ = evaluate(pattern, split, scorer, bank, backend, cfg)
                row.update(status="ok", value=acc)
            except Exception as exc:  # arm failure must not kill the study
                row.update(status="failed", value=None, error=str(exc))
            append_result(results_path, row)
            rows.append(row)
    return read_results(results_path)


def summarize_results(rows):
    """Mean and std per (study, arm) over seeds, from stored per-seed rows."""
    groups: dict[tuple, list] = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        groups.setdefault((r["study"], r["arm"]), []).append(float(r["value"]))
    summary = []
    for (study, arm), values in sorted(groups.items()):
        summary.append(
            {
                "study": study,
                "arm": arm,
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
                "seeds": len(values),
            }
        )
    return summary


def export_embeddings(pattern: VRPattern, split, backend: EncoderBackend, out_prefix,
                      apply_mode="pad"):
    """Encode the test split under the pattern and write matrix + labels +
    manifest files (binary matrix with a labels sidecar)."""
    samples = list(split.test) if hasattr(split, "test") else list(split)
    if not samples:
        raise ValidationError("empty split for embedding export")
    embeddings = []
    labels = []
    for s in samples:
        if apply_mode == "overlay":
            x_t = overlay_apply(s, pattern)
        else:
            x_t = pad_and_apply(s, pattern)
        embeddings.append(backend.encode_image(x_t))
        labels.append(s.label)
    mat = np.stack(embeddings)
    np.save(str(out_prefix) + ".embeddings.npy", mat)
    np.save(str(out_prefix) + ".labels.npy", np.asarray(labels, dtype=np.int64))
    manifest = {
        "rows": int(mat.shape[0]),
        "dim": int(mat.shape[1]),
        "apply_mode": apply_mode,
        "dtype": "float64",
    }
    with open(str(out_prefix) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return mat, np.asarray(labels)


def write_report(results_path, out_dir, fmt="md"):
    """Compile the summary table (md or csv) and render one accuracy figure
    per study next to it."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_results(results_path)
    summary = summarize_results(rows)
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "csv":
        table_path = os.path.join(out_dir, "summary.csv")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write("study,arm,mean,std,seeds\n")
            for r in summary:
                fh.write(f"{r['study']},{r['arm']},{r['mean']:.6f},{r['std']:.6f},{r['seeds']}\n")
    elif fmt == "md":
        table_path = os.path.join(out_dir, "summary.md")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write("| study | arm | mean | std | seeds |\n")
            fh.write("|---|---|---|---|---|\n")
            for r in summary:
                fh.write(
                    f"| {r['study']} | {r['arm']} | {r['mean']:.4f} | {r['std']:.4f} "
                    f"| {r['seeds']} |\n"
                )
    else:
        raise ValidationError(f"format must be md or csv, got {fmt!r}")

    figures = []
    for study in sorted({r["study"] for r in summary}):
        arms = [r for r in summary if r["study"] == study]
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(arms)), 3.2))
        ax.bar(
            range(len(arms)),
            [r["mean"] for r in arms],
            yerr=[r["std"] for r in arms],
            capsize=3,
            color="#4878a8",
        )
        ax.set_xticks(range(len(arms)))
        ax.set_xticklabels([r["arm"] for r in arms], rotation=30, ha="right")
        ax.set_ylabel("test accuracy")
        ax.set_title(study)
        fig.tight_layout()
        fig_path = os.path.join(out_dir, f"{study}.png")
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        figures.append(fig_path)
    return table_path, figures
