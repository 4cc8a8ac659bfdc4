"""Image preprocessing: resize, channel normalization, random affine augmentation.

Images are float arrays shaped (C, H, W); 2-D inputs are treated as a single
channel. Pixel coordinates use pixel centres: the centre of pixel (i, j) sits
at (i, j), and the image centre is ((H - 1) / 2, (W - 1) / 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError
from .ndcore.rng import Rng

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
# single-channel mode: channel-averaged ImageNet statistics
GRAY_MEAN = (0.449,)
GRAY_STD = (0.226,)


def _as_chw(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[None]
    if image.ndim != 3:
        raise ShapeError(f"expected (H, W) or (C, H, W) image, got shape {image.shape}")
    return image


def _bilinear_sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at in-range float coordinates ``ys``/``xs`` of any common shape."""
    _, h, w = image.shape
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    top = image[:, y0, x0] * (1 - wx) + image[:, y0, x1] * wx
    bot = image[:, y1, x0] * (1 - wx) + image[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_bilinear(image, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres (``align_corners=False``).

    Output pixel ``i`` samples source coordinate ``(i + 0.5) * in / out - 0.5``,
    clamped to the valid range ``[0, in - 1]``. Returns (C, out_h, out_w).
    """
    img = _as_chw(image)
    _, h, w = img.shape
    if h == 0 or w == 0:
        raise ShapeError("cannot resize an empty image")
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(img, yy, xx)


@dataclass
class Normalizer:
    """Per-channel ``(x - mean) / std``. Grayscale input is replicated to match."""

    mean: tuple = GRAY_MEAN
    std: tuple = GRAY_STD

    def __post_init__(self):
        if len(self.mean) != len(self.std):
            raise UsageError("normalization mean and std must have the same length")
        if any(s == 0 for s in self.std):
            raise UsageError("normalization std must be nonzero")
        self._mu = np.asarray(self.mean, dtype=np.float64)[:, None, None]
        self._sd = np.asarray(self.std, dtype=np.float64)[:, None, None]

    @classmethod
    def imagenet(cls, channels: int = 3) -> "Normalizer":
        if channels == 3:
            return cls(IMAGENET_MEAN, IMAGENET_STD)
        if channels == 1:
            return cls(GRAY_MEAN, GRAY_STD)
        raise UsageError(f"no default statistics for {channels} channels")

    def _match(self, img: np.ndarray) -> np.ndarray:
        c = len(self.mean)
        if img.shape[0] == c:
            return img
        if img.shape[0] == 1:
            return np.repeat(img, c, axis=0)
        raise ShapeError(f"image has {img.shape[0]} channels, normalizer expects {c}")

    def __call__(self, image) -> np.ndarray:
        return (self._match(_as_chw(image)) - self._mu) / self._sd

    def inverse(self, image) -> np.ndarray:
        return _as_chw(image) * self._sd + self._mu


def normalize(image, mean=GRAY_MEAN, std=GRAY_STD) -> np.ndarray:
    return Normalizer(tuple(mean), tuple(std))(image)


@dataclass
class AugmentConfig:
    max_rotation_deg: float = 10.0
    max_shift_frac: float = 0.05
    max_zoom_frac: float = 0.10

    def __post_init__(self):
        if self.max_rotation_deg < 0 or self.max_shift_frac < 0 or not 0 <= self.max_zoom_frac < 1:
            raise UsageError(f"invalid augmentation magnitudes: {self}")

    @property
    def is_identity(self) -> bool:
        return self.max_rotation_deg == 0 and self.max_shift_frac == 0 and self.max_zoom_frac == 0


def affine_warp(image, angle_deg: float = 0.0, shift=(0.0, 0.0), zoom: float = 1.0) -> np.ndarray:
    """Rotate (counter-clockwise as displayed), zoom about the centre, then shift.

    ``shift`` is (dy, dx) in pixels. Each output pixel is pulled back through
    the inverse transform and sampled bilinearly; samples landing outside the
    source grid take the image minimum.
    """
    img = _as_chw(image)
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = np.deg2rad(angle_deg)
    c, s = np.cos(th), np.sin(th)
    oy, ox = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = (oy - cy - shift[0]) / zoom
    dx = (ox - cx - shift[1]) / zoom
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    # absorb round-off from e.g. cos(90 deg) so exact grid hits stay in range
    sx = np.where(np.abs(sx - np.round(sx)) < 1e-9, np.round(sx), sx)
    sy = np.where(np.abs(sy - np.round(sy)) < 1e-9, np.round(sy), sy)
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    out = _bilinear_sample(img, np.clip(sy, 0, h - 1), np.clip(sx, 0, w - 1))
    return np.where(inside[None], out, img.min())


def augment(image, rng: Rng, cfg: AugmentConfig) -> np.ndarray:
    """Random rotation, per-axis shift and zoom, each drawn uniformly from ``rng``."""
    img = _as_chw(image)
    if cfg.is_identity:
        return img.copy()
    _, h, w = img.shape
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    fy, fx = rng.uniform(-cfg.max_shift_frac, cfg.max_shift_frac, size=2)
    zoom = rng.uniform(1.0 - cfg.max_zoom_frac, 1.0 + cfg.max_zoom_frac)
    return affine_warp(img, angle, (fy * h, fx * w), zoom)
