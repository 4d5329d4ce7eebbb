"""RGB pixel-buffer augmentations and binary PPM I/O.

Training pipeline order is fixed: resize, random grayscale (visible images
only), horizontal flip, random erasing. Inference uses resize only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batch import Modality

MAX_SIDE = 8192


@dataclass
class ImageBuffer:
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected (height, width, 3) pixels, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class AugmentConfig:
    grayscale_probability: float = 0.5
    flip_probability: float = 0.5
    erasing_probability: float = 0.5
    erasing_area_range: tuple[float, float] = (0.02, 0.4)
    erasing_aspect_range: tuple[float, float] = (0.3, 3.33)
    target_size: tuple[int, int] = (320, 128)

    def __post_init__(self):
        for name in ("grayscale_probability", "flip_probability", "erasing_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.erasing_area_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"erasing_area_range must satisfy 0 < low <= high <= 1, got {(lo, hi)}")
        lo, hi = self.erasing_aspect_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"erasing_aspect_range must satisfy 0 < low <= high, got {(lo, hi)}")
        h, w = self.target_size
        if h < 1 or w < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")
        if h > MAX_SIDE or w > MAX_SIDE:
            raise ValueError(f"target_size {self.target_size} exceeds {MAX_SIDE} pixels")


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    """BT.601 luma replicated to all three channels."""
    px = img.pixels.astype(np.float64)
    y = _round_half_up(0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2])
    return ImageBuffer(np.repeat(y[..., None], 3, axis=2))


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers, edges clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img: ImageBuffer, out_h: int, out_w: int) -> ImageBuffer:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be >= 1, got {(out_h, out_w)}")
    if (out_h, out_w) == (img.height, img.width):
        return ImageBuffer(img.pixels.copy())
    px = img.pixels.astype(np.float64)
    y0, y1, fy = _axis_weights(img.height, out_h)
    x0, x1, fx = _axis_weights(img.width, out_w)
    fy, fx = fy[:, None, None], fx[None, :, None]
    top = px[y0][:, x0] * (1 - fx) + px[y0][:, x1] * fx
    bottom = px[y1][:, x0] * (1 - fx) + px[y1][:, x1] * fx
    return ImageBuffer(_round_half_up(top * (1 - fy) + bottom * fy))


def horizontal_flip(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(img.pixels[:, ::-1].copy())


@dataclass(frozen=True)
class EraseBox:
    top: int
    left: int
    height: int
    width: int


def random_erase(img: ImageBuffer, cfg: AugmentConfig, rng: np.random.Generator,
                 attempts: int = 100) -> tuple[ImageBuffer, EraseBox | None]:
    """Fill one random rectangle with uniform noise.

    Area fraction and aspect ratio are drawn uniformly from the configured
    ranges; a draw is retried when, after rounding to whole pixels, the box
    does not fit or its area fraction leaves the configured range.
    """
    H, W = img.height, img.width
    area = H * W
    lo, hi = cfg.erasing_area_range
    for _ in range(attempts):
        target = rng.uniform(lo, hi) * area
        aspect = rng.uniform(*cfg.erasing_aspect_range)
        h = int(round(math.sqrt(target * aspect)))
        w = int(round(math.sqrt(target / aspect)))
        if not (1 <= h <= H and 1 <= w <= W):
            continue
        if not lo <= h * w / area <= hi:
            continue
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
        px = img.pixels.copy()
        px[top:top + h, left:left + w] = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        return ImageBuffer(px), EraseBox(top, left, h, w)
    return ImageBuffer(img.pixels.copy()), None


@dataclass
class AugmentRecord:
    grayscale: bool = False
    flipped: bool = False
    erased: EraseBox | None = field(default=None)


def augment_with_record(img: ImageBuffer, modality: Modality, cfg: AugmentConfig,
                        rng: np.random.Generator) -> tuple[ImageBuffer, AugmentRecord]:
    rec = AugmentRecord()
    out = resize_bilinear(img, *cfg.target_size)
    # one draw per stage keeps the random stream aligned across modalities
    if rng.random() < cfg.grayscale_probability and Modality(modality) == Modality.VISIBLE:
        out, rec.grayscale = to_grayscale(out), True
    if rng.random() < cfg.flip_probability:
        out, rec.flipped = horizontal_flip(out), True
    if rng.random() < cfg.erasing_probability:
        out, rec.erased = random_erase(out, cfg, rng)
    return out, rec


def apply_train_augmentations(img: ImageBuffer, modality: Modality, cfg: AugmentConfig,
                              rng: np.random.Generator) -> ImageBuffer:
    return augment_with_record(img, modality, cfg, rng)[0]


def prepare_test_image(img: ImageBuffer, cfg: AugmentConfig) -> ImageBuffer:
    return resize_bilinear(img, *cfg.target_size)


class PPMError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    """Skip whitespace and comments, return (token, token start, position after it)."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise PPMError("truncated header", start)
    return data[start:pos], start, pos


def ppm_decode(data: bytes) -> ImageBuffer:
    magic, start, pos = _header_token(data, 0)
    if magic != b"P6":
        raise PPMError(f"expected magic P6, found {magic[:8]!r}", start)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise PPMError(f"{name} is not a decimal integer: {tok[:16]!r}", start)
        fields.append((int(tok), start))
    (width, w_at), (height, h_at), (maxval, m_at) = fields
    if width < 1:
        raise PPMError("width must be positive", w_at)
    if height < 1:
        raise PPMError("height must be positive", h_at)
    if maxval != 255:
        raise PPMError(f"maxval must be 255, got {maxval}", m_at)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PPMError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * 3
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise PPMError(f"truncated payload: need {need} bytes, have {len(payload)}", pos + len(payload))
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return ImageBuffer(px)


def ppm_encode(img: ImageBuffer) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.pixels.tobytes()


def ppm_read(path) -> ImageBuffer:
    return ppm_decode(Path(path).read_bytes())


def ppm_write(img: ImageBuffer, path) -> None:
    Path(path).write_bytes(ppm_encode(img))
