"""Face-image normalization, cropping, and PNG IO.

Images are channel-first float arrays in [-1, 1] at a fixed 3x64x64; raw
bytes map through (v - 127.5) / 127.5 and back via round-half-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from voice2face.errors import ShapeError

CHANNELS = 3
SIZE = 64


@dataclass
class FaceImage:
    values: np.ndarray  # (3, 64, 64) in [-1, 1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (CHANNELS, SIZE, SIZE):
            raise ShapeError("FaceImage", "shape", (CHANNELS, SIZE, SIZE), self.values.shape)


def normalize_pixels(raw: np.ndarray) -> FaceImage:
    """Map (3, 64, 64) bytes in [0, 255] to [-1, 1]."""
    raw = np.asarray(raw)
    if raw.shape != (CHANNELS, SIZE, SIZE):
        raise ShapeError("normalize_pixels", "shape", (CHANNELS, SIZE, SIZE), raw.shape)
    return FaceImage((raw.astype(np.float32) - 127.5) / 127.5)


def denormalize_pixels(img) -> np.ndarray:
    """Map [-1, 1] back to bytes with round-half-up, clamped to [0, 255]."""
    values = img.values if isinstance(img, FaceImage) else np.asarray(img)
    scaled = 127.5 * values.astype(np.float64) + 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Textbook bilinear sampling on a (C, H, W) array, pixel-center aligned."""
    c, h, w = image.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(int)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(image.dtype)


def center_crop_resize(image: np.ndarray) -> FaceImage:
    """Largest center square of an arbitrary (C, H, W) byte image, resized to 64."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != CHANNELS:
        raise ShapeError("center_crop_resize", "channels", CHANNELS,
                         image.shape[0] if image.ndim == 3 else image.shape)
    _, h, w = image.shape
    if h < SIZE or w < SIZE:
        raise ShapeError("center_crop_resize", "spatial", f">= {SIZE}x{SIZE}", (h, w))
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    square = image[:, top:top + side, left:left + side].astype(np.float64)
    resized = bilinear_resize(square, SIZE, SIZE)
    return normalize_pixels(np.clip(np.round(resized), 0, 255).astype(np.uint8))


def save_png(path, img):
    """Write a FaceImage (or byte array in CHW) as RGB PNG."""
    data = img.values if isinstance(img, FaceImage) else np.asarray(img)
    if data.dtype != np.uint8:
        data = denormalize_pixels(data)
    Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an RGB PNG into a (3, H, W) byte array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.transpose(2, 0, 1)


def load_face(path) -> FaceImage:
    """Read a pre-cropped 64x64 face PNG; larger inputs are center-cropped."""
    raw = load_png(path)
    if raw.shape == (CHANNELS, SIZE, SIZE):
        return normalize_pixels(raw)
    return center_crop_resize(raw)


def tile_grid(images: list[np.ndarray], rows: int, cols: int, pad: int = 2) -> np.ndarray:
    """Tile CHW byte images into a (3, H', W') grid with white separators."""
    if len(images) != rows * cols:
        raise ShapeError("tile_grid", "image count", rows * cols, len(images))
    c, h, w = images[0].shape
    grid = np.full((c, rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad),
                   255, dtype=np.uint8)
    for idx, img in enumerate(images):
        r, col = divmod(idx, cols)
        y = pad + r * (h + pad)
        x = pad + col * (w + pad)
        grid[:, y:y + h, x:x + w] = img
    return grid
