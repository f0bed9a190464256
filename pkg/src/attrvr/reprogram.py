"""Input-space transform: zero padding, frame masks and the trainable pattern.

The trainable noise lives on a padded frame around the downstream image.
Only entries where the binary mask is 1 are ever trained or applied; the
interior stays bit-identical to the (optionally resized) input image.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ValidationError

CHECKPOINT_MAGIC = b"ATTRVR1"


@dataclass
class ImageSample:
    """A downstream image (C, H, W) with pixel values in [0, 1] and its label."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ValidationError(f"pixels must be (C, H, W), got shape {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise ValidationError("pixels contain non-finite values")


@dataclass
class VRPattern:
    """Trainable noise delta plus its frame mask.

    delta is stored full-size; interior entries are kept at zero and never
    receive gradient (the mask is zero there).
    """

    delta: np.ndarray
    mask: np.ndarray
    frame: int
    target_hw: tuple[int, int]
    channels: int = field(default=0)

    def __post_init__(self):
        if self.channels == 0:
            self.channels = int(self.delta.shape[0])

    @property
    def interior_hw(self) -> tuple[int, int]:
        h, w = self.target_hw
        return h - 2 * self.frame, w - 2 * self.frame

    @property
    def param_count(self) -> int:
        """Number of trainable entries (ones in the mask)."""
        return int(self.mask.sum())


def frame_param_count(target_hw, channels, frame) -> int:
    """Closed-form trainable parameter count for a given frame geometry."""
    h, w = target_hw
    return channels * (h * w - (h - 2 * frame) * (w - 2 * frame))


def make_pattern(target_hw, channels, frame) -> VRPattern:
    """Create an all-zero pattern with a frame mask on a (H, W) target."""
    h, w = target_hw
    if frame < 0:
        raise GeometryError(f"frame must be >= 0, got {frame}")
    if 2 * frame >= min(h, w):
        raise GeometryError(f"frame {frame} too large for target {target_hw}")
    mask = np.ones((channels, h, w), dtype=np.float64)
    mask[:, frame : h - frame, frame : w - frame] = 0.0
    delta = np.zeros((channels, h, w), dtype=np.float64)
    return VRPattern(delta=delta, mask=mask, frame=frame, target_hw=(h, w), channels=channels)


def bilinear_resize(x: np.ndarray, out_hw) -> np.ndarray:
    """Bilinear resize of a (C, H, W) tensor, half-pixel (corner-aligned-off) convention."""
    c, h, w = x.shape
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return x.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = ys - y0
    wx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = x[:, y0c][:, :, x0c] * (1 - wx) + x[:, y0c][:, :, x1c] * wx
    bot = x[:, y1c][:, :, x0c] * (1 - wx) + x[:, y1c][:, :, x1c] * wx
    return top * (1 - wy)[None, :, None] + bot * wy[None, :, None]


def zero_pad(x: np.ndarray, pattern: VRPattern) -> np.ndarray:
    """Place x in the center of an all-zero full-size canvas."""
    c, h, w = x.shape
    ih, iw = pattern.interior_hw
    if (h, w) != (ih, iw):
        raise GeometryError(f"image {x.shape[1:]} does not match interior {(ih, iw)}")
    out = np.zeros((c,) + pattern.target_hw, dtype=np.float64)
    f = pattern.frame
    th, tw = pattern.target_hw
    out[:, f : th - f, f : tw - f] = x
    return out


def pad_and_apply(x: ImageSample, p: VRPattern, resize_interior: bool = True,
                  clamp: bool = False) -> np.ndarray:
    """Zero-pad the image to the pattern's target size and add delta * mask.

    If resize_interior, x is first bilinearly resized to the interior; else
    its shape must already match the interior exactly.
    """
    pixels = x.pixels
    if pixels.shape[0] != p.channels:
        raise GeometryError(f"channel mismatch: image {pixels.shape[0]} vs pattern {p.channels}")
    if resize_interior:
        pixels = bilinear_resize(pixels, p.interior_hw)
    out = zero_pad(pixels, p) + p.delta * p.mask
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def overlay_apply(x: ImageSample, p: VRPattern, clamp: bool = False) -> np.ndarray:
    """Resize the image to the full target size and add delta * mask on top."""
    pixels = x.pixels
    if pixels.shape[0] != p.channels:
        raise GeometryError(f"channel mismatch: image {pixels.shape[0]} vs pattern {p.channels}")
    resized = bilinear_resize(pixels, p.target_hw)
    out = resized + p.delta * p.mask
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def save_pattern(p: VRPattern, path, config_hash: str = "") -> None:
    """Write a versioned flat checkpoint: magic, JSON header, raw delta bytes."""
    header = {
        "frame": p.frame,
        "target_hw": list(p.target_hw),
        "channels": p.channels,
        "config_hash": config_hash,
        "dtype": "float64",
        "shape": list(p.delta.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(p.delta, dtype=np.float64).tobytes())


def load_pattern(path) -> tuple[VRPattern, str]:
    """Read a checkpoint written by save_pattern; returns (pattern, config_hash)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a pattern checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        raw = fh.read()
    shape = tuple(header["shape"])
    delta = np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()
    p = make_pattern(tuple(header["target_hw"]), header["channels"], header["frame"])
    p.delta = delta * p.mask
    return p, header.get("config_hash", "")
