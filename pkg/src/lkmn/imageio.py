"""PNG I/O and conversions between 8-bit images and float tensors."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


@dataclass
class ImageBuffer:
    """Interleaved 8-bit RGB pixels, row-major."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise DimensionError(f"pixel array {self.pixels.shape} does not match {self.height}x{self.width}x3")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> ImageBuffer:
        pixels = np.asarray(pixels)
        return cls(pixels.shape[1], pixels.shape[0], pixels)


def _png_header(blob: bytes, path) -> tuple[int, int]:
    if blob[:8] != _PNG_SIG or blob[12:16] != b"IHDR":
        raise FormatError(f"{path}: not a PNG file")
    bit_depth, color_type = struct.unpack("BB", blob[24:26])
    return bit_depth, color_type


def load_png(path: str | Path) -> ImageBuffer:
    """Read an 8-bit PNG as RGB. Alpha is dropped, grayscale replicated."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    bit_depth, color_type = _png_header(blob, path)
    if bit_depth != 8:
        raise FormatError(f"{path}: {bit_depth}-bit PNG is not supported (only 8-bit per channel)")
    with Image.open(io.BytesIO(blob)) as im:
        if color_type == 3:  # palette
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
        rgb = im.convert("RGB")
        return ImageBuffer.from_array(np.asarray(rgb))


def save_png(img: ImageBuffer, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(img.pixels).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def image_to_array(img: ImageBuffer) -> np.ndarray:
    """(3, H, W) float32 in [0, 1]."""
    return (img.pixels.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


def array_to_image(arr: np.ndarray) -> ImageBuffer:
    """Inverse of :func:`image_to_array`: clamp to [0, 1], scale, round half up."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) array, got {arr.shape}")
    q = np.floor(np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return ImageBuffer.from_array(q.transpose(1, 2, 0))


def to_tensor(img: ImageBuffer) -> Tensor:
    return Tensor(image_to_array(img)[None])


def from_tensor(t: Tensor) -> ImageBuffer:
    if t.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
        raise DimensionError(f"expected a (1, 3, H, W) tensor, got {t.shape}")
    return array_to_image(t.data[0])


def mod_crop(img: ImageBuffer, m: int) -> ImageBuffer:
    """Crop the bottom/right edge so both sides are multiples of ``m``."""
    if m < 1:
        raise ConfigError(f"mod_crop modulus must be >= 1, got {m}")
    h, w = img.height - img.height % m, img.width - img.width % m
    if h == 0 or w == 0:
        raise DimensionError(f"mod_crop of {img.height}x{img.width} by {m} leaves an empty image")
    return ImageBuffer.from_array(img.pixels[:h, :w])
