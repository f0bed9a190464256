"""Per-class descriptive/distinctive attribute banks.

Covers prompt templating, generation through a text-completion client
(with an offline fixture client for tests), the length filter + resampling
that guarantees exactly m entries per class, JSON persistence, and
precomputation of text embeddings.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderBackend, embed_texts
from .errors import GenerationError, SchemaError, TransportError, ValidationError

MIN_ATTR_LENGTH = 21  # entries of length <= 20 characters are dropped
BANK_SCHEMA_VERSION = 1
KINDS = ("des", "dist")


@dataclass
class GenerationSettings:
    temperature: float = 0.99
    max_tokens: int = 50
    entries_per_class: int = 25
    stop: str = "."
    seed: int | None = None
    m: int = 20
    max_retries: int = 3
    backoff_base: float = 0.5


@dataclass
class AttributeBank:
    """Ordered per-class stores of m descriptive and m distinctive attributes."""

    classes: list[str]
    task_info: str
    des: dict[str, list[str]]
    dist: dict[str, list[str]]
    m: int
    provenance: dict = field(default_factory=dict)
    embeddings: dict | None = None  # (class, kind, index) -> vector

    def validate(self):
        for kind, store in (("des", self.des), ("dist", self.dist)):
            for cls in self.classes:
                entries = store.get(cls)
                if entries is None:
                    raise SchemaError(f"/{kind}/{cls}: missing class")
                if len(entries) != self.m:
                    raise SchemaError(f"/{kind}/{cls}: expected {self.m} entries, got {len(entries)}")
                for i, text in enumerate(entries):
                    if len(text) < MIN_ATTR_LENGTH:
                        raise SchemaError(
                            f"/{kind}/{cls}/{i}: entry of length {len(text)} violates the "
                            f"> 20 character filter"
                        )
        return self

    def entries(self, cls: str, kind: str) -> list[str]:
        if kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
        return (self.des if kind == "des" else self.dist)[cls]

    def embedding_matrix(self, cls: str, kind: str) -> np.ndarray:
        """(m, d) matrix of precomputed embeddings for one class and kind."""
        if self.embeddings is None:
            raise ValidationError("bank has no precomputed embeddings")
        return np.stack([self.embeddings[(cls, kind, i)] for i in range(self.m)])


def build_prompt(kind: str, class_name: str, task_info: str) -> str:
    """Query template for descriptive vs distinctive attribute generation."""
    if not class_name or not task_info:
        raise ValidationError("class_name and task_info must be nonempty")
    if kind == "des":
        return f"Describe the appearance of the {task_info} {class_name}"
    if kind == "dist":
        return f"Describe the unique appearance of a/an {class_name} from the other {task_info}"
    raise ValidationError(f"kind must be 'des' or 'dist', got {kind!r}")


class FixtureClient:
    """Replays recorded responses keyed by prompt string; no network."""

    def __init__(self, responses: dict[str, list[str]]):
        self.responses = responses

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, prompt: str, settings: GenerationSettings) -> list[str]:
        try:
            return list(self.responses[prompt])
        except KeyError:
            raise TransportError(f"fixture has no recorded response for prompt {prompt!r}")


def _request_with_retries(client, prompt, settings: GenerationSettings) -> list[str]:
    last = None
    for attempt in range(settings.max_retries):
        try:
            return client.complete(prompt, settings)
        except TransportError as exc:
            last = exc
            if attempt + 1 < settings.max_retries:
                time.sleep(settings.backoff_base * 2**attempt)
    raise TransportError(f"client failed after {settings.max_retries} attempts: {last}")


def _fill_to_m(valid: list[str], m: int, rng: np.random.Generator) -> list[str]:
    if len(valid) >= m:
        return valid[:m]  # keep arrival order for determinism
    extra = [valid[int(i)] for i in rng.integers(0, len(valid), size=m - len(valid))]
    return valid + extra


def generate_bank(classes, task_info, settings: GenerationSettings, client) -> AttributeBank:
    """Generate, filter and resample attributes for every class and kind."""
    if not classes:
        raise ValidationError("classes must be nonempty")
    rng = np.random.default_rng(settings.seed)
    stores: dict[str, dict[str, list[str]]] = {"des": {}, "dist": {}}
    prompt_hashes = {}
    for cls in classes:
        for kind in KINDS:
            prompt = build_prompt(kind, cls, task_info)
            prompt_hashes[f"{kind}:{cls}"] = hashlib.sha256(prompt.encode()).hexdigest()[:16]
            candidates = _request_with_retries(client, prompt, settings)
            valid = [c for c in candidates if len(c) >= MIN_ATTR_LENGTH]
            if not valid:
                raise GenerationError(
                    f"no valid candidates (> 20 chars) for class {cls!r} ({kind})"
                )
            stores[kind][cls] = _fill_to_m(valid, settings.m, rng)
    bank = AttributeBank(
        classes=list(classes),
        task_info=task_info,
        des=stores["des"],
        dist=stores["dist"],
        m=settings.m,
        provenance={
            "generator": type(client).__name__,
            "prompt_hashes": prompt_hashes,
            "settings": {
                "temperature": settings.temperature,
                "max_tokens": settings.max_tokens,
                "entries_per_class": settings.entries_per_class,
                "seed": settings.seed,
            },
        },
    )
    return bank.validate()


def save_bank(bank: AttributeBank, path) -> None:
    doc = {
        "schema_version": BANK_SCHEMA_VERSION,
        "task_info": bank.task_info,
        "m": bank.m,
        "classes": bank.classes,
        "des": bank.des,
        "dist": bank.dist,
        "provenance": bank.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_bank(path) -> AttributeBank:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}")
    for key in ("schema_version", "task_info", "m", "classes", "des", "dist"):
        if key not in doc:
            raise SchemaError(f"/{key}: required field missing")
    if doc["schema_version"] != BANK_SCHEMA_VERSION:
        raise SchemaError(f"/schema_version: unsupported version {doc['schema_version']}")
    bank = AttributeBank(
        classes=list(doc["classes"]),
        task_info=doc["task_info"],
        des={k: list(v) for k, v in doc["des"].items()},
        dist={k: list(v) for k, v in doc["dist"].items()},
        m=int(doc["m"]),
        provenance=doc.get("provenance", {}),
    )
    return bank.validate()


def precompute_embeddings(bank: AttributeBank, backend: EncoderBackend) -> AttributeBank:
    """Populate bank.embeddings for all 2 * m * |classes| entries."""
    embeddings = {}
    for cls in bank.classes:
        for kind in KINDS:
            vectors = embed_texts(backend, bank.entries(cls, kind))
            for i, v in enumerate(vectors):
                embeddings[(cls, kind, i)] = v
    bank.embeddings = embeddings
    return bank
