"""Dual-encoder backends: temperature-scaled cosine scoring over a shared space.

Ships a deterministic, analytically differentiable toy backend for desk-scale
work plus a narrow adapter slot for an external pretrained model.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import NumericError, ValidationError

_NORM_EPS = 1e-12


class EncoderBackend:
    """Abstract image/text embedding provider.

    Concrete backends expose encode_image / encode_text returning unit-ish
    vectors of dimension embed_dim, a temperature, and (if differentiable)
    image_vjp for pulling gradients back to pixel space.
    """

    embed_dim: int
    temperature: float
    input_shape: tuple[int, int, int]

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_text(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def image_vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Gradient of cotangent . encode_image(x) with respect to x."""
        raise NotImplementedError


def _safe_normalize(v: np.ndarray) -> np.ndarray:
    n = np.sqrt(v @ v + _NORM_EPS**2)
    return v / n


class ToyDualEncoder(EncoderBackend):
    """Seeded random-feature stand-in for a pretrained dual encoder.

    Image path: flatten -> fixed random linear map -> tanh -> L2 normalize.
    Text path: character-trigram hashing into embed_dim -> the same-dimension
    fixed random linear map -> L2 normalize. Shared phrases between attribute
    strings land on shared trigram buckets, so related texts embed nearby.
    """

    def __init__(self, seed=0, input_shape=(3, 24, 24), embed_dim=64, temperature=0.01):
        if temperature <= 0:
            raise ValidationError(f"temperature must be > 0, got {temperature}")
        self.seed = seed
        self.input_shape = tuple(input_shape)
        self.embed_dim = embed_dim
        self.temperature = temperature
        rng = np.random.default_rng(seed)
        d_in = int(np.prod(self.input_shape))
        self._w_img = rng.normal(size=(embed_dim, d_in)) / np.sqrt(d_in)
        self._w_txt = rng.normal(size=(embed_dim, embed_dim)) / np.sqrt(embed_dim)

    # image path -------------------------------------------------------
    def _image_forward(self, x):
        u = self._w_img @ np.asarray(x, dtype=np.float64).ravel()
        h = np.tanh(u)
        n = np.sqrt(h @ h + _NORM_EPS**2)
        return h, n

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        if tuple(x.shape) != self.input_shape:
            raise ValidationError(f"image shape {x.shape} != backend input {self.input_shape}")
        h, n = self._image_forward(x)
        return h / n

    def image_vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        h, n = self._image_forward(x)
        g = np.asarray(cotangent, dtype=np.float64)
        # d(h/n)/dh applied to g, then through tanh and the linear map
        gh = g / n - h * (h @ g) / n**3
        gu = gh * (1.0 - h**2)
        return (self._w_img.T @ gu).reshape(self.input_shape)

    # text path --------------------------------------------------------
    def _trigram_features(self, text: str) -> np.ndarray:
        padded = f"  {text.lower()}  "
        v = np.zeros(self.embed_dim)
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3]
            digest = hashlib.md5(tri.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "little") % self.embed_dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            v[idx] += sign
        return v

    def encode_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValidationError("cannot embed an empty string")
        return _safe_normalize(self._w_txt @ self._trigram_features(text))


class ExternalDualEncoder(EncoderBackend):
    """Adapter for a user-supplied pretrained image-text model.

    Requires torch + open_clip at runtime; fails fast with a clear message
    when the optional dependency is absent.
    """

    def __init__(self, model_name="ViT-B-16", pretrained="openai", temperature=0.01):
        try:
            import open_clip  # noqa: F401
            import torch  # noqa: F401
        except ImportError as exc:
            raise RuntimeError(
                "external backend needs the optional dependencies 'torch' and "
                "'open_clip_torch'; install them or use backend=toy"
            ) from exc
        import open_clip
        import torch

        self._torch = torch
        model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=pretrained)
        self._model = model.eval()
        self._tokenize = open_clip.get_tokenizer(model_name)
        self.temperature = temperature
        self.embed_dim = model.visual.output_dim
        self.input_shape = (3, model.visual.image_size[0], model.visual.image_size[1])

    def encode_image(self, x):
        torch = self._torch
        with torch.no_grad():
            t = torch.from_numpy(np.asarray(x, dtype=np.float32)).unsqueeze(0)
            z = self._model.encode_image(t)[0]
        z = z.numpy().astype(np.float64)
        return _safe_normalize(z)

    def encode_text(self, text):
        if not text:
            raise ValidationError("cannot embed an empty string")
        torch = self._torch
        with torch.no_grad():
            z = self._model.encode_text(self._tokenize([text]))[0]
        z = z.numpy().astype(np.float64)
        return _safe_normalize(z)

    def image_vjp(self, x, cotangent):
        torch = self._torch
        t = torch.from_numpy(np.asarray(x, dtype=np.float32)).unsqueeze(0)
        t.requires_grad_(True)
        z = self._model.encode_image(t)[0]
        z = z / torch.sqrt((z * z).sum() + _NORM_EPS**2)
        g = torch.from_numpy(np.asarray(cotangent, dtype=np.float32))
        (z * g).sum().backward()
        return t.grad[0].numpy().astype(np.float64)


def load_backend(config: dict) -> EncoderBackend:
    """Build a backend from a config mapping with key backend=toy|external."""
    kind = config.get("backend", "toy")
    if kind == "toy":
        return ToyDualEncoder(
            seed=config.get("seed", 0),
            input_shape=tuple(config.get("input_shape", (3, 24, 24))),
            embed_dim=config.get("embed_dim", 64),
            temperature=config.get("temperature", 0.01),
        )
    if kind == "external":
        return ExternalDualEncoder(
            model_name=config.get("model_name", "ViT-B-16"),
            pretrained=config.get("pretrained", "openai"),
            temperature=config.get("temperature", 0.01),
        )
    raise ValidationError(f"unknown backend kind {kind!r}")


def sim_clip(backend: EncoderBackend, image_tensor: np.ndarray, text: str) -> float:
    """Temperature-scaled cosine similarity between an image and a text."""
    if not text:
        raise ValidationError("text must be nonempty")
    zi = backend.encode_image(image_tensor)
    zt = backend.encode_text(text)
    return cosine(zi, zt) / backend.temperature


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine undefined for a zero-norm embedding")
    return float(a @ b / (na * nb))


def class_probabilities(scores) -> np.ndarray:
    """Softmax over class scores, stable under large magnitudes."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).all():
        raise NumericError("class scores contain non-finite values")
    e = np.exp(s - s.max())
    return e / e.sum()


def embed_texts(backend: EncoderBackend, texts) -> list[np.ndarray]:
    """Embed a list of strings, order preserved."""
    if not texts:
        raise ValidationError("texts must be a nonempty list")
    out = []
    for t in texts:
        if not t:
            raise ValidationError("texts contain an empty string")
        out.append(backend.encode_text(t))
    return out
