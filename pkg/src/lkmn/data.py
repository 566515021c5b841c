"""Bicubic degradation, paired datasets and augmented patch sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Tensor

log = logging.getLogger(__name__)


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax <= 2, far, 0.0))


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """(out_len, in_len) matrix applying 1-D cubic resampling with pixel-centre alignment.

    When shrinking, the kernel is stretched by the inverse scale (and its
    height reduced to match) so it low-pass filters before decimation.
    Taps falling outside the signal are clamped to the nearest edge sample.
    """
    scale = out_len / in_len
    width = 4.0
    if scale < 1 and antialias:
        width /= scale
        kernel = lambda t: scale * cubic(scale * t)  # noqa: E731
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 1, in_len).astype(np.int64) - 1
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), idx.ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize the last two axes of ``img`` (any leading dims) to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[-2:]
    rows = resize_matrix(h, out_h, antialias)
    cols = resize_matrix(w, out_w, antialias)
    return np.einsum("ij,...jk,lk->...il", rows, arr, cols)


def degrade(hr: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic-downscale a (3, H, W) float image in [0, 1] and quantise to 8 bits."""
    _, h, w = hr.shape
    if h % scale or w % scale:
        raise DimensionError(f"HR size {h}x{w} is not divisible by scale {scale}; mod-crop first")
    lr = bicubic_resize(hr, h // scale, w // scale)
    return (np.floor(np.clip(lr, 0.0, 1.0) * 255.0 + 0.5) / 255.0).astype(np.float32)


def sliding_slices(img: np.ndarray, size: int = 480, step: int = 240) -> list[np.ndarray]:
    """Cut a (C, H, W) image into overlapping size x size pieces (offline ingest helper)."""
    _, h, w = img.shape
    if h <= size and w <= size:
        return [img]
    ys = list(range(0, max(h - size, 0) + 1, step))
    xs = list(range(0, max(w - size, 0) + 1, step))
    if ys[-1] + size < h:
        ys.append(h - size)
    if xs[-1] + size < w:
        xs.append(w - size)
    return [img[:, y : y + size, x : x + size] for y in ys for x in xs]


@dataclass
class ImagePair:
    name: str
    lr: np.ndarray  # (3, h, w) float32 in [0, 1]
    hr: np.ndarray  # (3, h*scale, w*scale)


class PairedDataset:
    """In-memory list of aligned LR/HR pairs for one scale."""

    def __init__(self, pairs: Sequence[ImagePair], scale: int):
        self.scale = scale
        self.pairs = list(pairs)
        self._usable: dict[int, list[int]] = {}
        for p in self.pairs:
            if p.hr.shape[1:] != (p.lr.shape[1] * scale, p.lr.shape[2] * scale):
                raise DimensionError(f"{p.name}: HR {p.hr.shape[1:]} is not {scale}x LR {p.lr.shape[1:]}")

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> ImagePair:
        return self.pairs[i]

    @classmethod
    def from_hr(cls, hr_images: Sequence[np.ndarray], scale: int, names: Sequence[str] | None = None) -> PairedDataset:
        """Build pairs from (3, H, W) HR arrays, mod-cropping and bicubic-degrading each."""
        pairs = []
        for i, hr in enumerate(hr_images):
            h, w = hr.shape[1] - hr.shape[1] % scale, hr.shape[2] - hr.shape[2] % scale
            hr = np.ascontiguousarray(hr[:, :h, :w], dtype=np.float32)
            name = names[i] if names else f"img{i:04d}"
            pairs.append(ImagePair(name, degrade(hr, scale), hr))
        return cls(pairs, scale)

    @classmethod
    def from_directory(cls, hr_dir: str | Path, scale: int, slice_size: int | None = None) -> PairedDataset:
        """Load ``hr_dir/*.png``; LR comes from a sibling ``LRx{scale}`` directory when present.

        Missing LR images are generated by bicubic degradation and kept in
        memory. ``slice_size`` cuts large HR images into overlapping pieces
        first (only when no LR directory is used).
        """
        from .imageio import image_to_array, load_png, mod_crop

        hr_dir = Path(hr_dir)
        files = sorted(hr_dir.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG images in {hr_dir}")
        lr_dir = hr_dir.parent / f"LRx{scale}"
        pairs = []
        for f in files:
            hr = image_to_array(mod_crop(load_png(f), scale))
            lr_file = lr_dir / f.name
            if lr_file.exists():
                lr = image_to_array(load_png(lr_file))
                pairs.append(ImagePair(f.stem, lr, hr))
            elif slice_size:
                for k, piece in enumerate(sliding_slices(hr, slice_size, slice_size // 2)):
                    pairs.append(ImagePair(f"{f.stem}_s{k:03d}", degrade(piece, scale), np.ascontiguousarray(piece)))
            else:
                pairs.append(ImagePair(f.stem, degrade(hr, scale), hr))
        return cls(pairs, scale)


# -- augmentation --------------------------------------------------------------


def draw_augmentation(rng: np.random.Generator) -> tuple[int, bool, bool]:
    """(quarter turns, horizontal flip, vertical flip), each uniform and independent."""
    k = int(rng.integers(4))
    hflip = bool(rng.integers(2))
    vflip = bool(rng.integers(2))
    return k, hflip, vflip


def augment(img: np.ndarray, k: int, hflip: bool, vflip: bool) -> np.ndarray:
    """Flip then rotate the last two axes; identical calls keep LR/HR aligned."""
    if hflip:
        img = img[..., ::-1]
    if vflip:
        img = img[..., ::-1, :]
    if k:
        img = np.rot90(img, k, axes=(-2, -1))
    return np.ascontiguousarray(img)


def usable_pairs(dataset: PairedDataset, patch: int) -> list[int]:
    """Indices of pairs large enough for ``patch``; warns once per skipped image."""
    if patch in dataset._usable:
        return dataset._usable[patch]
    keep = []
    for i, p in enumerate(dataset.pairs):
        if p.lr.shape[1] < patch or p.lr.shape[2] < patch:
            log.warning("skipping %s: LR %dx%d is smaller than patch %d", p.name, p.lr.shape[1], p.lr.shape[2], patch)
            continue
        keep.append(i)
    dataset._usable[patch] = keep
    return keep


def sample_batch(
    dataset: PairedDataset, batch: int, patch: int, rng: np.random.Generator, augment_data: bool = True, dtype=np.float32
) -> tuple[Tensor, Tensor]:
    """Random aligned LR/HR crops (LR patch x patch, HR scaled), augmented identically."""
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    candidates = usable_pairs(dataset, patch)
    if not candidates:
        raise ConfigError(f"no image in the dataset is at least {patch}x{patch} at LR")
    s = dataset.scale
    lrs, hrs = [], []
    for _ in range(batch):
        pair = dataset.pairs[candidates[int(rng.integers(len(candidates)))]]
        _, h, w = pair.lr.shape
        y = int(rng.integers(h - patch + 1))
        x = int(rng.integers(w - patch + 1))
        lr = pair.lr[:, y : y + patch, x : x + patch]
        hr = pair.hr[:, s * y : s * (y + patch), s * x : s * (x + patch)]
        if augment_data:
            k, hf, vf = draw_augmentation(rng)
            lr, hr = augment(lr, k, hf, vf), augment(hr, k, hf, vf)
        lrs.append(lr)
        hrs.append(hr)
    return Tensor(np.stack(lrs).astype(dtype)), Tensor(np.stack(hrs).astype(dtype))


def synthetic_images(count: int, size: int, seed: int = 0) -> list[np.ndarray]:
    """Procedural (3, size, size) test images: flat shapes with hard edges over a smooth ramp."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(count):
        base = rng.random(3)[:, None, None] * 0.5 + 0.25 * (yy * rng.random() + xx * rng.random())[None]
        img = np.broadcast_to(base, (3, size, size)).copy()
        for _ in range(int(rng.integers(4, 9))):
            color = rng.random(3)[:, None]
            if rng.random() < 0.5:
                y0, x0 = rng.integers(0, size, 2)
                hh, ww = rng.integers(size // 8, size // 2, 2)
                mask = (yy * size >= y0) & (yy * size < y0 + hh) & (xx * size >= x0) & (xx * size < x0 + ww)
            else:
                cy, cx = rng.random(2)
                r = rng.uniform(0.08, 0.3)
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            img[:, mask] = color
        period = rng.uniform(3, 8)
        angle = rng.uniform(0, np.pi)
        stripes = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) * size / period))
        band = (yy > rng.uniform(0.6, 0.8))
        img[:, band] = (0.2 + 0.6 * stripes[band])[None]
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return images
