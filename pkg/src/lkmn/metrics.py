"""Y-channel PSNR and SSIM following the usual super-resolution protocol."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

# BT.601 studio swing, inputs in [0, 255]
_Y_COEFFS = np.array([65.481, 128.553, 24.966]) / 255.0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) RGB in [0, 255] -> (H, W) float64 luma in [16, 235]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got {arr.shape}")
    return 16.0 + arr @ _Y_COEFFS


def _crop(a: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return a
    return a[border:-border, border:-border]


def _pair(a, b, border: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image sizes differ: {a.shape} vs {b.shape}")
    a, b = _crop(a, border), _crop(b, border)
    if a.size == 0:
        raise DimensionError(f"border crop {border} leaves nothing of a {a.shape} image")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    """PSNR in dB for planes on the 0-255 scale; ``inf`` when identical."""
    a, b = _pair(a, b, border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian; its outer product with itself is the SSIM window."""
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win1d: np.ndarray) -> np.ndarray:
    k = len(win1d)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ win1d
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ win1d


def ssim(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    """Single-scale SSIM: 11x11 Gaussian (sigma 1.5), K1=0.01, K2=0.03, L=255, valid positions."""
    a, b = _pair(a, b, border_crop)
    if a.ndim != 2:
        raise DimensionError(f"ssim expects a 2-D plane, got {a.shape}")
    if min(a.shape) < 11:
        raise DimensionError(f"ssim needs at least 11x11 pixels after cropping, got {a.shape}")
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    g = gaussian_kernel(11, 1.5)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class ImageScore:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    images: list[ImageScore] = field(default_factory=list)
    border_crop: int = 0
    y_channel: bool = True
    scale: int | None = None
    ensemble: bool = False
    method: str = "model"

    def add(self, name: str, psnr_db: float, ssim_value: float) -> None:
        self.images.append(ImageScore(name, psnr_db, ssim_value))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr_db for s in self.images])) if self.images else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.images])) if self.images else math.nan

    def to_dict(self) -> dict:
        def num(x):
            # JSON has no infinity literal; identical images report the string "inf"
            return "inf" if math.isinf(x) else x

        return {
            "protocol": {"border_crop": self.border_crop, "y_channel": self.y_channel},
            "scale": self.scale,
            "method": self.method,
            "ensemble": self.ensemble,
            "images": [{"name": s.name, "psnr_db": num(s.psnr_db), "ssim": s.ssim} for s in self.images],
            "mean": {"psnr_db": num(self.mean_psnr), "ssim": self.mean_ssim},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_pair(sr_rgb: np.ndarray, hr_rgb: np.ndarray, border_crop: int) -> tuple[float, float]:
    """PSNR/SSIM on the Y channel of two (H, W, 3) 8-bit images."""
    ys, yh = rgb_to_y(sr_rgb), rgb_to_y(hr_rgb)
    return psnr(ys, yh, border_crop), ssim(ys, yh, border_crop)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["protocol", "scale", "method", "ensemble", "images", "mean"],
    "properties": {
        "protocol": {
            "type": "object",
            "required": ["border_crop", "y_channel"],
            "properties": {"border_crop": {"type": "integer", "minimum": 0}, "y_channel": {"type": "boolean"}},
        },
        "scale": {"type": ["integer", "null"]},
        "method": {"type": "string"},
        "ensemble": {"type": "boolean"},
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "psnr_db", "ssim"],
                "properties": {
                    "name": {"type": "string"},
                    "psnr_db": {"anyOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]},
                    "ssim": {"type": "number", "minimum": -1, "maximum": 1},
                },
            },
        },
        "mean": {
            "type": "object",
            "required": ["psnr_db", "ssim"],
        },
    },
}
