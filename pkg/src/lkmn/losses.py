"""Pixel and frequency-domain training losses."""

from __future__ import annotations

from . import ops
from .errors import DimensionError
from .tensor import Tensor


def _check_pair(pred: Tensor, gt: Tensor) -> None:
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match target shape {gt.shape}")


def l1_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean absolute error."""
    _check_pair(pred, gt)
    return ops.mean(ops.abs_(ops.sub(pred, gt)))


def fft_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Frequency-domain L1: mean over all DFT coefficients of |dRe| + |dIm|.

    The transform is unnormalised, so a constant offset ``d`` puts ``d*h*w``
    into the DC bin alone and the loss evaluates to ``|d|``, the same scale as
    :func:`l1_loss`.
    """
    _check_pair(pred, gt)
    # DFT is linear: fft2(pred) - fft2(gt) == fft2(pred - gt)
    re, im = ops.fft2(ops.sub(pred, gt))
    return ops.mean(ops.add(ops.abs_(re), ops.abs_(im)))


def sr_loss(pred: Tensor, gt: Tensor, l1_weight: float = 1.0, fft_weight: float = 0.05) -> tuple[Tensor, Tensor, Tensor]:
    """Weighted sum used for training; returns (total, l1, fft)."""
    l1 = l1_loss(pred, gt)
    if fft_weight == 0.0:
        fft = Tensor.zeros((1,), dtype=pred.dtype)
        return ops.mul(l1, l1_weight), l1, fft
    fft = fft_loss(pred, gt)
    total = ops.add(ops.mul(l1, l1_weight), ops.mul(fft, fft_weight))
    return total, l1, fft
